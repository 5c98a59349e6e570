#include "occ/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <fstream>
#include <sstream>

#include "occ/manifest.hpp"

namespace occ {

namespace {

constexpr char kMagic[4] = {'D', 'F', 'K', '1'};

class Writer {
 public:
  void u32(std::uint32_t v) { little(v, 4); }
  void u64(std::uint64_t v) { little(v, 8); }
  void f64(double v) { little(std::bit_cast<std::uint64_t>(v), 8); }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out += s;
  }
  void vector(const Vector& v) {
    u64(static_cast<std::uint64_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) f64(v[i]);
  }
  std::string out;

 private:
  void little(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
};

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t begin, std::size_t end, const std::string& origin)
      : bytes_(bytes), pos_(begin), end_(end), origin_(origin) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(little(4)); }
  std::uint64_t u64() { return little(8); }
  double f64() { return std::bit_cast<double>(little(8)); }
  std::string text() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Vector vector() {
    const std::uint64_t n = u64();
    if (n > (end_ - pos_) / 8) truncated();
    Vector v(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = f64();
    return v;
  }
  std::size_t position() const { return pos_; }
  bool done() const { return pos_ == end_; }
  [[noreturn]] void truncated() const { throw CheckpointError(origin_ + ": truncated checkpoint"); }
  void need(std::uint64_t n) const {
    if (n > end_ - pos_) truncated();
  }
  void skip(std::uint64_t n) {
    need(n);
    pos_ += static_cast<std::size_t>(n);
  }

 private:
  std::uint64_t little(int bytes) {
    need(static_cast<std::uint64_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  const std::string& bytes_;
  std::size_t pos_;
  std::size_t end_;
  std::string origin_;
};

std::uint32_t crc_of(const std::string& bytes, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t left = n;
  while (left > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    left -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const NamedTensor& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw CheckpointError("checkpoint has no tensor '" + name + "'");
}

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  Writer tensors;
  tensors.u32(static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const NamedTensor& t : checkpoint.tensors) {
    tensors.text(t.name);
    tensors.u32(static_cast<std::uint32_t>(t.tensor.rank()));
    for (int d : t.tensor.shape()) tensors.u32(static_cast<std::uint32_t>(d));
    tensors.vector(t.tensor.values());
  }
  Writer optim;
  optim.u32(static_cast<std::uint32_t>(checkpoint.optimizers.size()));
  for (const OptimizerRecord& o : checkpoint.optimizers) {
    optim.text(o.name);
    optim.f64(o.state.rate);
    optim.f64(o.state.beta1);
    optim.f64(o.state.beta2);
    optim.f64(o.state.eps);
    optim.u64(static_cast<std::uint64_t>(o.state.step));
    optim.u32(static_cast<std::uint32_t>(o.state.m.size()));
    for (std::size_t i = 0; i < o.state.m.size(); ++i) {
      optim.vector(o.state.m[i]);
      optim.vector(o.state.v[i]);
    }
  }

  Writer file;
  file.out.append(kMagic, 4);
  file.u32(kCheckpointVersion);
  for (const std::string& body : {checkpoint.meta.to_text(), tensors.out, optim.out}) {
    file.u64(body.size());
    file.out += body;
  }
  file.u32(crc_of(file.out, file.out.size()));
  return file.out;
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 8 + 4) throw CheckpointError(origin + ": truncated checkpoint");
  if (bytes.compare(0, 4, kMagic, 4) != 0) throw CheckpointError(origin + ": not a checkpoint file");
  Reader head(bytes, 4, bytes.size(), origin);
  const std::uint32_t version = head.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(origin + ": checkpoint version " + std::to_string(version) +
                          ", expected " + std::to_string(kCheckpointVersion));
  }
  // Locate the sections before trusting any of their contents.
  const std::size_t body_end = bytes.size() - 4;
  Reader walk(bytes, 8, body_end, origin);
  std::size_t begin[3], end[3];
  for (int s = 0; s < 3; ++s) {
    const std::uint64_t n = walk.u64();
    begin[s] = walk.position();
    walk.skip(n);
    end[s] = walk.position();
  }
  if (!walk.done()) throw CheckpointError(origin + ": trailing bytes before checksum");
  Reader tail(bytes, body_end, bytes.size(), origin);
  if (tail.u32() != crc_of(bytes, body_end)) throw CheckpointError(origin + ": checksum mismatch");

  Checkpoint cp;
  cp.meta = Config::parse(bytes.substr(begin[0], end[0] - begin[0]), origin);

  Reader tr(bytes, begin[1], end[1], origin);
  const std::uint32_t count = tr.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = tr.text();
    const std::uint32_t rank = tr.u32();
    if (rank > 8) throw CheckpointError(origin + ": implausible rank for " + t.name);
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(tr.u32()));
    Vector values = tr.vector();
    if (values.size() != numel(shape)) throw CheckpointError(origin + ": size mismatch for " + t.name);
    t.tensor = Tensor(shape, std::move(values));
    cp.tensors.push_back(t);
  }
  if (!tr.done()) throw CheckpointError(origin + ": malformed tensor table");

  Reader orr(bytes, begin[2], end[2], origin);
  const std::uint32_t optimizers = orr.u32();
  for (std::uint32_t i = 0; i < optimizers; ++i) {
    OptimizerRecord o;
    o.name = orr.text();
    o.state.rate = orr.f64();
    o.state.beta1 = orr.f64();
    o.state.beta2 = orr.f64();
    o.state.eps = orr.f64();
    o.state.step = static_cast<std::int64_t>(orr.u64());
    const std::uint32_t n = orr.u32();
    for (std::uint32_t k = 0; k < n; ++k) {
      o.state.m.push_back(orr.vector());
      o.state.v.push_back(orr.vector());
    }
    cp.optimizers.push_back(o);
  }
  if (!orr.done()) throw CheckpointError(origin + ": malformed optimizer table");
  return cp;
}

void checkpoint_save(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const std::string bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint checkpoint_load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream bytes;
  bytes << in.rdbuf();
  return decode_checkpoint(bytes.str(), path.string());
}

void require_task(const Checkpoint& checkpoint, const std::string& task) {
  if (checkpoint.task() != task) {
    throw TaskMismatchError("checkpoint was written for task '" + checkpoint.task() +
                            "', expected '" + task + "'");
  }
}

void export_store(const ParamStore& store, const std::string& prefix, Checkpoint& checkpoint) {
  for (const ParamStore::Entry& e : store.entries()) {
    checkpoint.tensors.push_back({prefix + e.name, e.tensor.clone()});
  }
}

void import_store(ParamStore& store, const std::string& prefix, const Checkpoint& checkpoint) {
  for (const ParamStore::Entry& e : store.entries()) {
    const Tensor& saved = checkpoint.tensor(prefix + e.name);
    if (saved.shape() != e.tensor.shape()) {
      throw CheckpointError("tensor " + prefix + e.name + " has shape " + to_string(saved.shape()) +
                            ", model expects " + to_string(e.tensor.shape()));
    }
    Tensor target = e.tensor;
    target.values() = saved.values();
  }
}

void write_config(Config& meta, const OccNetConfig& c) {
  meta.set("occnet.width_multiplier", format_double(c.width_multiplier));
  meta.set("occnet.input_size", std::to_string(c.input_size));
}

void write_config(Config& meta, const GeneratorConfig& c) {
  meta.set("generator.base_channels", std::to_string(c.base_channels));
  meta.set("generator.growth", std::to_string(c.growth));
  meta.set("generator.dense_layers", std::to_string(c.dense_layers));
  meta.set("generator.dilation_rates", join(c.dilation_rates));
  meta.set("generator.dilated_blocks", std::to_string(c.dilated_blocks));
  meta.set("generator.activation", activation_name(c.feature_activation));
}

void write_config(Config& meta, const DiscriminatorConfig& c) {
  meta.set("discriminator.channels", join(c.channels));
  meta.set("discriminator.kernel", std::to_string(c.kernel));
  meta.set("discriminator.padding", std::to_string(c.padding));
  meta.set("discriminator.input_size", std::to_string(c.input_size));
  meta.set("discriminator.power_iterations", std::to_string(c.power_iterations));
}

OccNetConfig read_occnet_config(const Config& meta) {
  OccNetConfig c;
  c.width_multiplier = meta.get_double("occnet.width_multiplier", c.width_multiplier);
  c.input_size = meta.get_int("occnet.input_size", c.input_size);
  if (!(c.width_multiplier > 0.0)) throw ConfigError("occnet.width_multiplier must be > 0");
  return c;
}

GeneratorConfig read_generator_config(const Config& meta) {
  GeneratorConfig c;
  c.base_channels = meta.get_int("generator.base_channels", c.base_channels);
  c.growth = meta.get_int("generator.growth", c.growth);
  c.dense_layers = meta.get_int("generator.dense_layers", c.dense_layers);
  c.dilation_rates = meta.get_int_list("generator.dilation_rates", c.dilation_rates);
  c.dilated_blocks = meta.get_int("generator.dilated_blocks", c.dilated_blocks);
  c.feature_activation = parse_activation(
      meta.get_string("generator.activation", activation_name(c.feature_activation)));
  if (c.base_channels < 1 || c.growth < 1 || c.dense_layers < 1 || c.dilated_blocks < 0) {
    throw ConfigError("generator channel counts must be positive");
  }
  return c;
}

DiscriminatorConfig read_discriminator_config(const Config& meta) {
  DiscriminatorConfig c;
  c.channels = meta.get_int_list("discriminator.channels", c.channels);
  c.kernel = meta.get_int("discriminator.kernel", c.kernel);
  c.padding = meta.get_int("discriminator.padding", c.padding);
  c.input_size = meta.get_int("discriminator.input_size", c.input_size);
  c.power_iterations = meta.get_int("discriminator.power_iterations", c.power_iterations);
  if (c.channels.empty() || c.kernel < 1 || c.power_iterations < 1) {
    throw ConfigError("invalid discriminator settings");
  }
  return c;
}

const std::vector<std::string>& model_config_keys() {
  static const std::vector<std::string> keys = {
      "occnet.width_multiplier",      "occnet.input_size",         "generator.base_channels",
      "generator.growth",             "generator.dense_layers",    "generator.dilation_rates",
      "generator.dilated_blocks",     "generator.activation",      "discriminator.channels",
      "discriminator.kernel",         "discriminator.padding",     "discriminator.input_size",
      "discriminator.power_iterations"};
  return keys;
}

}  // namespace occ
