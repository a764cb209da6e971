#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "medcam/errors.hpp"
#include "medcam/netpbm.hpp"
#include "medcam/rng.hpp"
#include "medcam/tensor.hpp"

namespace medcam {

/// One generated image. Classes: 0 textured background only, 1 bright blob,
/// 2 dark ring, 3 streak cluster. truth_mask marks exactly the pixels of the
/// class-defining shape (all zeros for class 0).
struct SynthImage {
  Tensor pixels;                        // [3,S,S], values in [0,1]
  int label = 0;
  std::vector<std::uint8_t> truth_mask;  // S*S, 0/1
  std::uint64_t seed = 0;               // per-image derived seed
  std::string id;
  int distractor_count = 0;
  double blob_radius = 0.0;  // class 1 only

  int size() const { return pixels.dim(1); }
  Tensor batch() const {
    return pixels.with_shape({1, pixels.dim(0), pixels.dim(1), pixels.dim(2)});
  }
};

namespace synth_detail {

// Multi-octave value noise in [0,1]: bilinear interpolation of random grids.
inline std::vector<double> value_noise(Rng& rng, int size,
                                       const std::vector<std::pair<int, double>>& octaves) {
  std::vector<double> field(static_cast<std::size_t>(size) * size, 0.0);
  double total_amp = 0.0;
  for (const auto& [cell, amp] : octaves) total_amp += amp;
  for (const auto& [cell, amp] : octaves) {
    const int g = size / cell + 2;
    std::vector<double> grid(static_cast<std::size_t>(g) * g);
    for (double& v : grid) v = rng.uniform();
    for (int y = 0; y < size; ++y) {
      const double fy = static_cast<double>(y) / cell;
      const int y0 = static_cast<int>(fy);
      const double ty = fy - y0;
      for (int x = 0; x < size; ++x) {
        const double fx = static_cast<double>(x) / cell;
        const int x0 = static_cast<int>(fx);
        const double tx = fx - x0;
        const double v00 = grid[static_cast<std::size_t>(y0) * g + x0];
        const double v01 = grid[static_cast<std::size_t>(y0) * g + x0 + 1];
        const double v10 = grid[static_cast<std::size_t>(y0 + 1) * g + x0];
        const double v11 = grid[static_cast<std::size_t>(y0 + 1) * g + x0 + 1];
        const double v = (1 - ty) * ((1 - tx) * v00 + tx * v01) +
                         ty * ((1 - tx) * v10 + tx * v11);
        field[static_cast<std::size_t>(y) * size + x] += amp * v;
      }
    }
  }
  for (double& v : field) v /= total_amp;
  return field;
}

struct Painter {
  double* r;
  double* g;
  double* b;
  int size;

  void set(int x, int y, double cr, double cg, double cb) {
    if (x < 0 || y < 0 || x >= size || y >= size) return;
    const long long i = static_cast<long long>(y) * size + x;
    r[i] = cr;
    g[i] = cg;
    b[i] = cb;
  }
};

inline void draw_square(Painter& p, int cx, int cy, int half, double gray) {
  for (int y = cy - half; y <= cy + half; ++y) {
    for (int x = cx - half; x <= cx + half; ++x) p.set(x, y, gray, gray * 0.98, gray * 1.02);
  }
}

inline void draw_cross(Painter& p, int cx, int cy, int arm, double gray) {
  for (int d = -arm; d <= arm; ++d) {
    p.set(cx + d, cy, gray, gray, gray * 0.96);
    p.set(cx + d, cy + 1, gray, gray, gray * 0.96);
    p.set(cx, cy + d, gray, gray, gray * 0.96);
    p.set(cx + 1, cy + d, gray, gray, gray * 0.96);
  }
}

}  // namespace synth_detail

/// Deterministic function of (label, image_size, rng). The evidence shape is
/// painted last so the truth mask covers exactly its visible pixels.
inline SynthImage generate_image(int label, int image_size, Rng rng) {
  if (image_size < 32) throw ParameterError("generate_image: image_size must be >= 32");
  if (label < 0 || label > 3) throw ParameterError("generate_image: label must be 0..3");
  const double scale = image_size / 64.0;
  const int s = image_size;

  SynthImage img;
  img.label = label;
  img.pixels = Tensor::zeros({3, s, s});
  img.truth_mask.assign(static_cast<std::size_t>(s) * s, 0);

  const long long plane = static_cast<long long>(s) * s;
  double* red = img.pixels.data();
  double* green = red + plane;
  double* blue = green + plane;

  // Background: one shared luminance field plus a low-amplitude tint field
  // per channel.
  const int c16 = std::max(2, static_cast<int>(16 * scale));
  const int c8 = std::max(2, static_cast<int>(8 * scale));
  const int c4 = std::max(2, static_cast<int>(4 * scale));
  const auto base = synth_detail::value_noise(rng, s, {{c16, 0.55}, {c8, 0.30}, {c4, 0.15}});
  const auto tint_r = synth_detail::value_noise(rng, s, {{c8, 1.0}});
  const auto tint_g = synth_detail::value_noise(rng, s, {{c8, 1.0}});
  const auto tint_b = synth_detail::value_noise(rng, s, {{c8, 1.0}});
  auto clamp01 = [](double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); };
  for (long long i = 0; i < plane; ++i) {
    red[i] = clamp01(0.28 + 0.38 * base[i] + 0.10 * (tint_r[i] - 0.5));
    green[i] = clamp01(0.28 + 0.38 * base[i] + 0.10 * (tint_g[i] - 0.5));
    blue[i] = clamp01(0.28 + 0.38 * base[i] + 0.10 * (tint_b[i] - 0.5));
  }

  synth_detail::Painter paint{red, green, blue, s};

  // Distractor shapes: count and placement are sampled identically for every
  // class, so they carry no label information.
  img.distractor_count = rng.uniform_int(4);
  for (int d = 0; d < img.distractor_count; ++d) {
    const int kind = rng.uniform_int(2);
    const double gray = rng.uniform(0.45, 0.62);
    const int margin = static_cast<int>(8 * scale) + 2;
    const int cx = margin + rng.uniform_int(s - 2 * margin);
    const int cy = margin + rng.uniform_int(s - 2 * margin);
    if (kind == 0) {
      synth_detail::draw_square(paint, cx, cy, 2 + rng.uniform_int(2), gray);
    } else {
      synth_detail::draw_cross(paint, cx, cy, 3 + rng.uniform_int(3), gray);
    }
  }

  auto mark = [&](int x, int y) {
    img.truth_mask[static_cast<std::size_t>(y) * s + x] = 1;
  };

  if (label == 1) {
    // Bright circular blob.
    const double r = rng.uniform(5.0, 9.0) * scale;
    img.blob_radius = r;
    const int margin = static_cast<int>(std::ceil(r)) + 3;
    const int cx = margin + rng.uniform_int(s - 2 * margin);
    const int cy = margin + rng.uniform_int(s - 2 * margin);
    const double cr = 0.93 + rng.uniform(-0.04, 0.04);
    const double cg = 0.86 + rng.uniform(-0.04, 0.04);
    const double cb = 0.50 + rng.uniform(-0.05, 0.05);
    const int ri = static_cast<int>(std::ceil(r));
    for (int y = cy - ri; y <= cy + ri; ++y) {
      for (int x = cx - ri; x <= cx + ri; ++x) {
        const double dx = x - cx, dy = y - cy;
        if (dx * dx + dy * dy <= r * r) {
          paint.set(x, y, clamp01(cr), clamp01(cg), clamp01(cb));
          mark(x, y);
        }
      }
    }
  } else if (label == 2) {
    // Dark ring.
    const double r_out = rng.uniform(9.0, 14.0) * scale;
    const double thick = rng.uniform(2.5, 4.0) * scale;
    const double r_in = r_out - thick;
    const int margin = static_cast<int>(std::ceil(r_out)) + 3;
    const int cx = margin + rng.uniform_int(s - 2 * margin);
    const int cy = margin + rng.uniform_int(s - 2 * margin);
    const double cr = std::max(0.02, 0.09 + rng.uniform(-0.03, 0.03));
    const double cg = std::max(0.02, 0.10 + rng.uniform(-0.03, 0.03));
    const double cb = std::max(0.02, 0.14 + rng.uniform(-0.03, 0.03));
    const int ri = static_cast<int>(std::ceil(r_out));
    for (int y = cy - ri; y <= cy + ri; ++y) {
      for (int x = cx - ri; x <= cx + ri; ++x) {
        const double dx = x - cx, dy = y - cy;
        const double d2 = dx * dx + dy * dy;
        if (d2 <= r_out * r_out && d2 >= r_in * r_in) {
          paint.set(x, y, cr, cg, cb);
          mark(x, y);
        }
      }
    }
  } else if (label == 3) {
    // Cluster of parallel streaks with alternating bright/dark bands.
    const double theta = rng.uniform(0.0, 3.14159265358979323846);
    const double ux = std::cos(theta), uy = std::sin(theta);
    const double vx = -uy, vy = ux;
    const int n_streaks = 3 + rng.uniform_int(3);
    const double spacing = rng.uniform(3.0, 4.5) * scale;
    const double length = rng.uniform(14.0, 22.0) * scale;
    const double half_w = rng.uniform(0.7, 1.1) * scale;
    const double period = 2.0 * scale;
    const int margin =
        static_cast<int>(std::ceil(length / 2 + n_streaks * spacing / 2)) + 3;
    const int cx = margin + rng.uniform_int(s - 2 * margin);
    const int cy = margin + rng.uniform_int(s - 2 * margin);
    const int reach = margin - 2;
    for (int y = cy - reach; y <= cy + reach; ++y) {
      for (int x = cx - reach; x <= cx + reach; ++x) {
        const double px = x - cx, py = y - cy;
        const double along = px * ux + py * uy;
        if (std::fabs(along) > length / 2) continue;
        const double perp = px * vx + py * vy;
        for (int k = 0; k < n_streaks; ++k) {
          const double offset = (k - (n_streaks - 1) / 2.0) * spacing;
          if (std::fabs(perp - offset) <= half_w) {
            const long long band =
                static_cast<long long>(std::floor((along + length) / period));
            if (band % 2 == 0) {
              paint.set(x, y, 0.95, 0.90, 0.84);
            } else {
              paint.set(x, y, 0.10, 0.10, 0.16);
            }
            mark(x, y);
            break;
          }
        }
      }
    }
  }
  return img;
}

/// Four-class corpus, class-blocked: image i of class c has global index
/// c*n_per_class + i and derives its own seed from (seed, index).
inline std::vector<SynthImage> generate_corpus(int n_per_class, int image_size,
                                               std::uint64_t seed) {
  if (n_per_class < 1) throw ParameterError("generate_corpus: n_per_class must be >= 1");
  if (image_size < 32) throw ParameterError("generate_corpus: image_size must be >= 32");
  std::vector<SynthImage> corpus;
  corpus.reserve(static_cast<std::size_t>(n_per_class) * 4);
  for (int cls = 0; cls < 4; ++cls) {
    for (int j = 0; j < n_per_class; ++j) {
      const int index = cls * n_per_class + j;
      const std::uint64_t img_seed = Rng::mix(seed, static_cast<std::uint64_t>(index));
      SynthImage img = generate_image(cls, image_size, Rng(img_seed));
      img.seed = img_seed;
      char buf[32];
      std::snprintf(buf, sizeof(buf), "img_%05d_c%d", index, cls);
      img.id = buf;
      corpus.push_back(std::move(img));
    }
  }
  return corpus;
}

/// Stratified split: within each class the last round(fraction*n) images go
/// to the test side.
inline std::pair<std::vector<SynthImage>, std::vector<SynthImage>> split_corpus(
    const std::vector<SynthImage>& corpus, double test_fraction) {
  if (test_fraction < 0.0 || test_fraction >= 1.0) {
    throw ParameterError("split_corpus: test_fraction must lie in [0,1)");
  }
  std::vector<std::vector<const SynthImage*>> per_class;
  for (const auto& img : corpus) {
    if (img.label >= static_cast<int>(per_class.size())) {
      per_class.resize(static_cast<std::size_t>(img.label) + 1);
    }
    per_class[static_cast<std::size_t>(img.label)].push_back(&img);
  }
  std::vector<SynthImage> train, test;
  for (auto& group : per_class) {
    const int n = static_cast<int>(group.size());
    const int n_test = static_cast<int>(std::lround(test_fraction * n));
    for (int i = 0; i < n; ++i) {
      (i < n - n_test ? train : test).push_back(*group[static_cast<std::size_t>(i)]);
    }
  }
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// On-disk corpus: PPM images, PGM truth masks, CSV manifest
// ---------------------------------------------------------------------------

/// Writes images, truth masks, and manifest.csv with columns
/// filename,label,seed,truth_mask_filename,split.
inline void write_corpus(const std::string& dir, const std::vector<SynthImage>& corpus,
                         double test_fraction) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("write_corpus: cannot create '" + dir + "': " + ec.message());

  auto [train, test] = split_corpus(corpus, test_fraction);
  std::vector<std::pair<const SynthImage*, std::string>> rows;
  for (const auto& img : train) rows.emplace_back(&img, "train");
  for (const auto& img : test) rows.emplace_back(&img, "test");
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.first->id < b.first->id; });

  std::ofstream manifest(dir + "/manifest.csv");
  if (!manifest) throw IoError("write_corpus: cannot open manifest in '" + dir + "'");
  manifest << "filename,label,seed,truth_mask_filename,split\n";
  for (const auto& [img, split] : rows) {
    const std::string img_name = img->id + ".ppm";
    const std::string mask_name = img->id + "_truth.pgm";
    write_ppm(dir + "/" + img_name, img->pixels);
    std::vector<double> mask(img->truth_mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = img->truth_mask[i] ? 1.0 : 0.0;
    write_pgm(dir + "/" + mask_name, mask, img->size(), img->size());
    manifest << img_name << "," << img->label << "," << img->seed << "," << mask_name
             << "," << split << "\n";
  }
  if (!manifest) throw IoError("write_corpus: manifest write failed");
}

struct CorpusOnDisk {
  std::vector<SynthImage> train;
  std::vector<SynthImage> test;
};

/// Loads a corpus written by write_corpus. Pixel values are the quantized
/// on-disk values.
inline CorpusOnDisk read_corpus(const std::string& dir) {
  std::ifstream manifest(dir + "/manifest.csv");
  if (!manifest) throw IoError("read_corpus: cannot open '" + dir + "/manifest.csv'");
  std::string line;
  if (!std::getline(manifest, line)) {
    throw FormatError("read_corpus: empty manifest");
  }
  if (line != "filename,label,seed,truth_mask_filename,split") {
    throw FormatError("read_corpus: unexpected manifest header '" + line + "'");
  }
  CorpusOnDisk out;
  int line_no = 1;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        cells.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    if (cells.size() != 5) {
      throw FormatError("read_corpus: manifest line " + std::to_string(line_no) +
                        " has " + std::to_string(cells.size()) + " fields, expected 5");
    }
    SynthImage img;
    img.pixels = read_ppm(dir + "/" + cells[0]);
    img.label = std::stoi(cells[1]);
    img.seed = std::stoull(cells[2]);
    img.id = cells[0].substr(0, cells[0].size() - 4);
    const GrayImage mask = read_pgm(dir + "/" + cells[3]);
    img.truth_mask.resize(mask.values.size());
    for (std::size_t i = 0; i < mask.values.size(); ++i) {
      img.truth_mask[i] = mask.values[i] >= 0.5 ? 1 : 0;
    }
    (cells[4] == "test" ? out.test : out.train).push_back(std::move(img));
  }
  return out;
}

}  // namespace medcam
