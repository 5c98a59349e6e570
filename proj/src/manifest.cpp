#include "occ/manifest.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "occ/error.hpp"

namespace occ {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& text, const std::string& what) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) throw FormatError(what + ": bad number '" + text + "'");
  return v;
}

std::vector<Sample> Manifest::split(const std::string& name) const {
  std::vector<Sample> out;
  for (const Sample& s : samples) {
    if (s.split == name) out.push_back(s);
  }
  return out;
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ostringstream text;
  if (manifest.mean_pixel.computed) {
    text << "#meanpixel";
    for (double c : manifest.mean_pixel.rgb) text << ' ' << format_double(c);
    text << '\n';
  }
  for (const Sample& s : manifest.samples) {
    for (const std::string* field : {&s.split, &s.background, &s.mask, &s.observation}) {
      if (field->find_first_of("\t\n") != std::string::npos) {
        throw FormatError("manifest field contains a tab or newline: " + *field);
      }
    }
    text << s.split << '\t' << s.seed << '\t' << s.background << '\t' << s.mask << '\t'
         << s.observation << '\n';
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text.str();
  if (!out) throw IoError("write failed for " + path.string());
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Manifest manifest;
  manifest.base = path.parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("#meanpixel", 0) == 0) {
      std::istringstream fields(line.substr(10));
      std::string token;
      int k = 0;
      while (fields >> token) {
        if (k == 3) throw FormatError(where + ": too many mean pixel values");
        manifest.mean_pixel.rgb[static_cast<std::size_t>(k++)] = parse_double(token, where);
      }
      if (k != 3) throw FormatError(where + ": mean pixel needs 3 values");
      manifest.mean_pixel.computed = true;
      continue;
    }
    if (line[0] == '#') continue;
    const std::vector<std::string> f = split_tabs(line);
    if (f.size() != 5) throw FormatError(where + ": expected 5 tab-separated fields");
    if (f[0] != "train" && f[0] != "eval") throw FormatError(where + ": unknown split '" + f[0] + "'");
    Sample s;
    s.split = f[0];
    const auto res = std::from_chars(f[1].data(), f[1].data() + f[1].size(), s.seed);
    if (res.ec != std::errc() || res.ptr != f[1].data() + f[1].size()) {
      throw FormatError(where + ": bad seed '" + f[1] + "'");
    }
    s.background = f[2];
    s.mask = f[3];
    s.observation = f[4];
    manifest.samples.push_back(s);
  }
  return manifest;
}

}  // namespace occ
