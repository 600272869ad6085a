// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "harness/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "common/errors.hpp"
#include "harness/digest.hpp"
#include "harness/vocab.hpp"
#include "json.hpp"
#include "ndgrad/rng.hpp"

namespace etris::harness {

namespace fs = std::filesystem;

namespace {

constexpr int kMaxSceneAttempts = 100;
constexpr int kPlacementTries = 200;
constexpr double kSmallRadius = 0.125;  // fractions of the image side
constexpr double kLargeRadius = 0.2;
constexpr double kLocationMargin = 0.12;
constexpr Rgb kBackground{24, 24, 28};

const std::vector<std::string>& location_words() {
  static const std::vector<std::string> words = {"left", "right", "top", "bottom"};
  return words;
}

double location_key(const ShapeSpec& s, int location) {
  switch (location) {
    case 0: return s.cx;
    case 1: return -s.cx;
    case 2: return s.cy;
    default: return -s.cy;
  }
}

struct Description {
  bool size = false, color = false;
  int location = -1;
};

bool matches(const ShapeSpec& s, const ShapeSpec& target, const Description& d) {
  if (s.kind != target.kind) return false;
  if (d.size && s.large != target.large) return false;
  if (d.color && s.color != target.color) return false;
  return true;
}

// True when the description singles out the target.
bool unambiguous(const std::vector<ShapeSpec>& shapes, int target, const Description& d, int image_size) {
  const ShapeSpec& t = shapes[static_cast<std::size_t>(target)];
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (static_cast<int>(i) == target || !matches(shapes[i], t, d)) continue;
    if (d.location < 0) return false;
    // The target must be clearly the extreme one among the matching shapes.
    if (location_key(shapes[i], d.location) - location_key(t, d.location) < kLocationMargin * image_size) return false;
  }
  return true;
}

std::string describe(const ShapeSpec& t, const Description& d) {
  std::string out = "the";
  if (d.size) out += t.large ? " large" : " small";
  if (d.color) out += " " + color_names()[static_cast<std::size_t>(t.color)];
  out += " " + shape_name(t.kind);
  if (d.location >= 0) out += " on the " + location_words()[static_cast<std::size_t>(d.location)];
  return out;
}

bool place_shapes(nd::Rng& rng, int image_size, std::vector<ShapeSpec>& shapes) {
  const int count = rng.uniform_int(2, 4);
  for (int n = 0; n < count; ++n) {
    ShapeSpec s;
    s.kind = static_cast<ShapeKind>(rng.uniform_int(0, 2));
    s.color = rng.uniform_int(0, static_cast<int>(shape_colors().size()) - 1);
    s.large = rng.uniform() < 0.5;
    s.r = (s.large ? kLargeRadius : kSmallRadius) * image_size;
    const double bound = bounding_radius(s);
    bool placed = false;
    for (int t = 0; t < kPlacementTries && !placed; ++t) {
      s.cx = rng.uniform(bound, image_size - bound);
      s.cy = rng.uniform(bound, image_size - bound);
      placed = std::all_of(shapes.begin(), shapes.end(), [&](const ShapeSpec& o) {
        return std::hypot(o.cx - s.cx, o.cy - s.cy) > bound + bounding_radius(o) + 2.0;
      });
    }
    if (placed) shapes.push_back(s);
  }
  return shapes.size() >= 2;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Reads one whitespace-delimited header field of a PNM file, skipping comments.
int read_pnm_int(std::istream& in, const std::string& path) {
  int c;
  while ((c = in.peek()) != EOF) {
    if (std::isspace(c)) {
      in.get();
    } else if (c == '#') {
      std::string ignored;
      std::getline(in, ignored);
    } else {
      break;
    }
  }
  int value = -1;
  if (!(in >> value) || value < 0) throw InputError("malformed header in '" + path + "'");
  return value;
}

std::string sample_dir_name(int index) {
  std::ostringstream os;
  os << std::setw(5) << std::setfill('0') << index;
  return os.str();
}

}  // namespace

const std::vector<std::string>& color_names() {
  static const std::vector<std::string> names = {"red", "green", "blue", "yellow"};
  return names;
}

const std::vector<Rgb>& shape_colors() {
  static const std::vector<Rgb> colors = {{220, 45, 40}, {40, 175, 70}, {55, 90, 225}, {230, 205, 45}};
  return colors;
}

std::string shape_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::circle: return "circle";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
  }
  return "?";
}

bool shape_contains(const ShapeSpec& s, double px, double py) {
  const double dx = px - s.cx, dy = py - s.cy;
  switch (s.kind) {
    case ShapeKind::circle:
      return dx * dx + dy * dy <= s.r * s.r;
    case ShapeKind::square: {
      const double half = 0.85 * s.r;
      return std::abs(dx) <= half && std::abs(dy) <= half;
    }
    case ShapeKind::triangle: {
      // Apex up; base at 0.8 r below the centre.
      const double ax = s.cx, ay = s.cy - s.r;
      const double bx = s.cx - s.r, by = s.cy + 0.8 * s.r;
      const double cx = s.cx + s.r, cy = s.cy + 0.8 * s.r;
      auto edge = [&](double x0, double y0, double x1, double y1) {
        return (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0);
      };
      const double e0 = edge(ax, ay, bx, by), e1 = edge(bx, by, cx, cy), e2 = edge(cx, cy, ax, ay);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
  }
  return false;
}

double bounding_radius(const ShapeSpec& s) {
  switch (s.kind) {
    case ShapeKind::circle: return s.r;
    case ShapeKind::square: return 0.85 * std::sqrt(2.0) * s.r;
    case ShapeKind::triangle: return std::sqrt(1.0 + 0.64) * s.r;
  }
  return s.r;
}

Scene generate_scene(std::uint64_t seed, std::uint64_t index, int image_size) {
  if (image_size < 16 || image_size % 16 != 0)
    throw ConfigError("image size " + std::to_string(image_size) + " must be a positive multiple of 16");
  nd::Rng rng(nd::derive_seed(seed, "sample" + std::to_string(index)));
  for (int attempt = 0; attempt < kMaxSceneAttempts; ++attempt) {
    Scene scene;
    if (!place_shapes(rng, image_size, scene.shapes)) continue;
    scene.target = rng.uniform_int(0, static_cast<int>(scene.shapes.size()) - 1);
    Description d;
    d.color = rng.uniform() < 0.75;
    d.size = rng.uniform() < 0.5;
    d.location = rng.uniform() < 0.3 ? rng.uniform_int(0, 3) : -1;
    if (!unambiguous(scene.shapes, scene.target, d, image_size)) continue;
    scene.expression = describe(scene.shapes[static_cast<std::size_t>(scene.target)], d);
    return scene;
  }
  throw InternalError("no unambiguous expression after " + std::to_string(kMaxSceneAttempts) + " scenes for sample " +
                      std::to_string(index));
}

Sample render_scene(const Scene& scene, int image_size, int max_len) {
  Sample s;
  s.image_size = image_size;
  s.rgb.resize(static_cast<std::size_t>(image_size) * image_size * 3);
  s.mask = objective::BinaryMask::zeros(image_size, image_size);
  for (int y = 0; y < image_size; ++y)
    for (int x = 0; x < image_size; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * image_size + x;
      Rgb c = kBackground;
      for (std::size_t i = 0; i < scene.shapes.size(); ++i) {
        if (!shape_contains(scene.shapes[i], x + 0.5, y + 0.5)) continue;
        c = shape_colors()[static_cast<std::size_t>(scene.shapes[i].color)];
        if (static_cast<int>(i) == scene.target) s.mask.pixels[p] = 1;
      }
      s.rgb[3 * p] = c.r;
      s.rgb[3 * p + 1] = c.g;
      s.rgb[3 * p + 2] = c.b;
    }
  s.expression = scene.expression;
  s.tokens = tokenize(scene.expression, max_len);
  s.eos = eos_position(s.tokens);
  return s;
}

Sample generate_sample(std::uint64_t seed, std::uint64_t index, int image_size, int max_len) {
  return render_scene(generate_scene(seed, index, image_size), image_size, max_len);
}

std::vector<std::string> grammar_expressions() {
  std::vector<std::string> out;
  for (int size = 0; size < 3; ++size)
    for (int color = -1; color < static_cast<int>(color_names().size()); ++color)
      for (int kind = 0; kind < 3; ++kind)
        for (int loc = -1; loc < 4; ++loc) {
          ShapeSpec t;
          t.kind = static_cast<ShapeKind>(kind);
          t.large = size == 2;
          t.color = std::max(color, 0);
          out.push_back(describe(t, Description{size > 0, color >= 0, loc}));
        }
  return out;
}

std::string grammar_hash() {
  Sha256 h;
  for (const auto& w : vocabulary()) h.update(w + "\n");
  for (const auto& e : grammar_expressions()) h.update(e + "\n");
  std::ostringstream params;
  params << kSmallRadius << ' ' << kLargeRadius << ' ' << kLocationMargin << ' ' << kMaxSceneAttempts;
  h.update(params.str());
  return h.hex();
}

void write_ppm(const std::string& path, int width, int height, const std::vector<std::uint8_t>& rgb) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << "P6\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

std::vector<std::uint8_t> read_ppm(const std::string& path, int& width, int& height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read '" + path + "'");
  std::string magic;
  in >> magic;
  if (magic != "P6") throw InputError("'" + path + "' is not a binary PPM");
  width = read_pnm_int(in, path);
  height = read_pnm_int(in, path);
  const int maxval = read_pnm_int(in, path);
  if (maxval != 255) throw InputError("'" + path + "' must have maxval 255");
  in.get();
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(width) * height * 3);
  if (!in.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size())))
    throw InputError("'" + path + "' is truncated");
  return rgb;
}

void write_pgm(const std::string& path, const objective::BinaryMask& mask) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << "P5\n" << mask.width << ' ' << mask.height << "\n1\n";
  out.write(reinterpret_cast<const char*>(mask.pixels.data()), static_cast<std::streamsize>(mask.pixels.size()));
}

objective::BinaryMask read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read '" + path + "'");
  std::string magic;
  in >> magic;
  if (magic != "P5") throw InputError("'" + path + "' is not a binary PGM");
  const int width = read_pnm_int(in, path);
  const int height = read_pnm_int(in, path);
  const int maxval = read_pnm_int(in, path);
  if (maxval < 1 || maxval > 255) throw InputError("'" + path + "' has an unsupported maxval");
  in.get();
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(width) * height);
  if (!in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size())))
    throw InputError("'" + path + "' is truncated");
  for (auto& p : pixels) p = p ? 1 : 0;
  return objective::BinaryMask(height, width, std::move(pixels));
}

void synth_generate(const std::string& dir, int n, std::uint64_t seed, int image_size, int max_len) {
  if (n < 1) throw InputError("sample count must be at least 1");
  const fs::path root(dir);
  fs::create_directories(root);
  for (int i = 0; i < n; ++i) {
    const Sample s = generate_sample(seed, static_cast<std::uint64_t>(i), image_size, max_len);
    const fs::path sd = root / sample_dir_name(i);
    fs::create_directories(sd);
    write_ppm((sd / "image.ppm").string(), image_size, image_size, s.rgb);
    write_pgm((sd / "mask.pgm").string(), s.mask);
    nlohmann::ordered_json tj;
    tj["expression"] = s.expression;
    tj["tokens"] = s.tokens;
    tj["eos"] = s.eos;
    write_text(sd / "tokens.json", tj.dump(2) + "\n");
  }
  nlohmann::ordered_json m;
  m["format"] = "etris-synth";
  m["version"] = 1;
  m["count"] = n;
  m["seed"] = seed;
  m["image_size"] = image_size;
  m["max_len"] = max_len;
  m["vocab"] = vocabulary();
  m["grammar_hash"] = grammar_hash();
  write_text(root / "manifest.json", m.dump(2) + "\n");
}

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_text(root / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad manifest in '" + dir + "': " + e.what());
  }
  Dataset ds;
  int count = 0;
  try {
    count = m.at("count").get<int>();
    ds.seed = m.at("seed").get<std::uint64_t>();
    ds.image_size = m.at("image_size").get<int>();
    ds.max_len = m.at("max_len").get<int>();
    if (m.at("vocab").get<std::vector<std::string>>() != vocabulary())
      throw InputError("dataset '" + dir + "' uses a different vocabulary");
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad manifest in '" + dir + "': " + e.what());
  }
  if (count < 1) throw InputError("dataset '" + dir + "' is empty");
  for (int i = 0; i < count; ++i) {
    const fs::path sd = root / sample_dir_name(i);
    Sample s;
    int w = 0, h = 0;
    s.rgb = read_ppm((sd / "image.ppm").string(), w, h);
    if (w != ds.image_size || h != ds.image_size)
      throw InputError("'" + sd.string() + "' image is " + std::to_string(w) + "x" + std::to_string(h) +
                       ", manifest says " + std::to_string(ds.image_size));
    s.image_size = ds.image_size;
    s.mask = read_pgm((sd / "mask.pgm").string());
    if (s.mask.width != w || s.mask.height != h) throw InputError("'" + sd.string() + "' mask size differs from image");
    try {
      const auto tj = nlohmann::json::parse(read_text(sd / "tokens.json"));
      s.expression = tj.at("expression").get<std::string>();
      s.tokens = tj.at("tokens").get<std::vector<int>>();
    } catch (const nlohmann::json::exception& e) {
      throw InputError("bad tokens.json in '" + sd.string() + "': " + e.what());
    }
    s.eos = eos_position(s.tokens);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace etris::harness
