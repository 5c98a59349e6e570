#include "occ/infer.hpp"

#include "occ/image_io.hpp"
#include "occ/metrics.hpp"
#include "occ/report.hpp"
#include "occ/synth.hpp"
#include "occ/train.hpp"

namespace occ {

namespace {

Tensor batch_of(const Tensor& t) {
  Shape s = t.shape();
  s.insert(s.begin(), 1);
  return reshape(t, s);
}

// Probability map and adaptive-threshold mask, both 1 x H x W.
std::pair<Tensor, Tensor> segment(OccNet& model, const Tensor& image, long& passes) {
  NoTape untracked;
  const long before = model.forward_count();
  const Tensor prob = model.forward(batch_of(image), false);
  passes += model.forward_count() - before;
  const int h = image.dim(1), w = image.dim(2);
  const FenceMap binary = adaptive_threshold(to_map(prob, 0));
  Tensor mask({1, h, w});
  Eigen::Map<FenceMap>(mask.data(), h, w) = binary;
  return {reshape(prob, {1, h, w}), mask};
}

}  // namespace

InferResult infer(const InferOptions& options) {
  const Checkpoint cp = checkpoint_load(options.checkpoint);
  const Tensor image = load_image(options.image);
  if (image.dim(0) != 3) throw ShapeError(options.image.string() + ": expected an RGB image");
  std::error_code ec;
  std::filesystem::create_directories(options.output_dir, ec);
  if (ec) throw IoError("cannot create " + options.output_dir.string() + ": " + ec.message());
  const auto out_path = [&](const std::string& suffix) {
    return options.output_dir / (options.stem + suffix);
  };

  InferResult result;
  result.task = cp.task();
  if (result.task == "segmentation") {
    auto model = restore_occnet(cp);
    std::tie(result.probability, result.mask) = segment(*model, image, result.segmentation_passes);
    save_image(out_path("_prob.pgm"), result.probability);
    save_image(out_path("_mask.pgm"), result.mask);
    result.written = {out_path("_prob.pgm"), out_path("_mask.pgm")};
    return result;
  }
  require_task(cp, "inpainting");
  InpaintingModels models = restore_inpainting(cp);

  if (!options.mask.empty()) {
    result.mask = load_image(options.mask);
    if (result.mask.dim(0) != 1 || result.mask.dim(1) != image.dim(1) || result.mask.dim(2) != image.dim(2)) {
      throw ShapeError(options.mask.string() + ": mask must be a grayscale image of the input's size");
    }
  } else if (!options.seg_checkpoint.empty()) {
    auto segmenter = restore_occnet(checkpoint_load(options.seg_checkpoint));
    std::tie(result.probability, result.mask) = segment(*segmenter, image, result.segmentation_passes);
    save_image(out_path("_mask.pgm"), result.mask);
    result.written.push_back(out_path("_mask.pgm"));
  } else {
    throw Error("inpainting needs a mask or a segmentation checkpoint");
  }

  {
    NoTape untracked;
    const Tensor mask = batch_of(result.mask);
    const Tensor observed = occlude(batch_of(image), mask, checkpoint_mean_pixel(cp));
    const long before = models.generator->forward_count();
    const Tensor raw = models.generator->forward(to_signed(observed), mask);
    result.generator_passes = models.generator->forward_count() - before;
    const Tensor fill = scale(add_scalar(raw, 1.0), 0.5);
    result.output = reshape(composite_output(fill, batch_of(image), mask), image.shape());
  }
  save_image(out_path("_inpainted.ppm"), result.output);
  result.written.push_back(out_path("_inpainted.ppm"));
  return result;
}

}  // namespace occ
