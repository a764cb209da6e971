#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "medcam/errors.hpp"
#include "medcam/nn_ops.hpp"
#include "medcam/optim.hpp"
#include "medcam/rng.hpp"
#include "medcam/synth.hpp"
#include "medcam/tensor.hpp"

namespace medcam {

/// Ordered set of named post-ReLU activations captured during one forward
/// pass. Keys and shapes are identical across passes for a fixed input size.
struct ActivationSet {
  std::vector<std::pair<std::string, Tensor>> entries;

  const Tensor& at(const std::string& name) const {
    for (const auto& [k, v] : entries) {
      if (k == name) return v;
    }
    throw ContractError("ActivationSet: unknown tap '" + name + "'");
  }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (const auto& [k, v] : entries) out.push_back(k);
    return out;
  }

  ActivationSet detached() const {
    ActivationSet out;
    out.entries.reserve(entries.size());
    for (const auto& [k, v] : entries) out.entries.emplace_back(k, v.detach());
    return out;
  }
};

namespace evdx {

constexpr char kMagic[4] = {'E', 'V', 'D', 'X'};
constexpr std::uint8_t kVersion = 1;

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& out, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw FormatError("model file: truncated (u32)");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline double get_f64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (in.gcount() != 8) throw FormatError("model file: truncated (f64)");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

}  // namespace evdx

/// Small CNN classifier: three (3x3 conv, ReLU, 2x2 average pool) blocks with
/// channels 16/32/64, global average pool, linear head. The post-ReLU output
/// of each block is exposed as a named tap ("block1".."block3").
class ClassifierModel {
 public:
  ClassifierModel() = default;

  static ClassifierModel random_init(std::uint64_t seed, int num_classes = 4,
                                     int in_channels = 3, int image_size = 64) {
    if (num_classes < 2) throw ContractError("ClassifierModel: need >= 2 classes");
    ClassifierModel m;
    m.num_classes_ = num_classes;
    m.in_channels_ = in_channels;
    m.image_size_ = image_size;
    Rng rng(Rng::mix(seed, 0x636c6673ULL));
    int in_ch = in_channels;
    for (int b = 0; b < kNumBlocks; ++b) {
      const int out_ch = kBlockChannels[b];
      m.kernels_[b] = he_kernel(rng, out_ch, in_ch, kKernelSize);
      m.conv_biases_[b] = Tensor::zeros({out_ch}, true);
      in_ch = out_ch;
    }
    const int feat = kBlockChannels[kNumBlocks - 1];
    m.head_weight_ = Tensor::zeros({num_classes, feat}, true);
    {
      const double std_dev = std::sqrt(2.0 / feat);
      double* w = m.head_weight_.data();
      for (long long i = 0; i < m.head_weight_.numel(); ++i) w[i] = std_dev * rng.normal();
    }
    m.head_bias_ = Tensor::zeros({num_classes}, true);
    return m;
  }

  int num_classes() const { return num_classes_; }
  int in_channels() const { return in_channels_; }
  int image_size() const { return image_size_; }
  bool frozen() const { return frozen_; }

  std::vector<std::string> tap_names() const {
    return {"block1", "block2", "block3"};
  }

  /// Deepest tap; the conventional Grad-CAM layer.
  std::string last_tap() const { return "block3"; }

  struct Forward {
    Tensor logits;       // [N, num_classes]
    ActivationSet taps;  // post-ReLU block outputs
  };

  Forward forward_with_taps(Tape& tape, const Tensor& image) const {
    if (image.ndim() != 4 || image.dim(1) != in_channels_ ||
        image.dim(2) != image_size_ || image.dim(3) != image_size_) {
      std::ostringstream msg;
      msg << "classifier: expected input [N," << in_channels_ << "," << image_size_
          << "," << image_size_ << "], got [";
      for (int i = 0; i < image.ndim(); ++i) msg << (i ? "," : "") << image.dim(i);
      msg << "]";
      throw DimensionError(msg.str());
    }
    Forward fw;
    Tensor x = image;
    for (int b = 0; b < kNumBlocks; ++b) {
      x = conv2d(tape, x, kernels_[b], 1, 1);
      x = bias_add(tape, x, conv_biases_[b]);
      x = relu(tape, x);
      fw.taps.entries.emplace_back("block" + std::to_string(b + 1), x);
      x = avg_pool2(tape, x);
    }
    x = global_avg_pool(tape, x);
    x = linear(tape, x, head_weight_);
    fw.logits = bias_add(tape, x, head_bias_);
    return fw;
  }

  /// Convenience: logits for one [1,C,S,S] image without keeping taps.
  Tensor logits(const Tensor& image) const {
    Tape tape;
    return forward_with_taps(tape, image).logits;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (int b = 0; b < kNumBlocks; ++b) {
      out.push_back(kernels_[b]);
      out.push_back(conv_biases_[b]);
    }
    out.push_back(head_weight_);
    out.push_back(head_bias_);
    return out;
  }

  void freeze() {
    for (Tensor& t : all_params()) {
      t.set_requires_grad(false);
      t.release_grad();  // drop stale training gradients
    }
    frozen_ = true;
  }

  std::uint64_t weight_hash() const {
    std::ostringstream buf(std::ios::binary);
    serialize(buf);
    const std::string s = buf.str();
    return fnv1a64(s.data(), s.size());
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("save_model: cannot open '" + path + "'");
    serialize(f);
    if (!f) throw IoError("save_model: write failed for '" + path + "'");
  }

  static ClassifierModel load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_model: cannot open '" + path + "'");
    return deserialize(f);
  }

  void serialize(std::ostream& out) const {
    out.write(evdx::kMagic, 4);
    out.put(static_cast<char>(evdx::kVersion));
    evdx::put_u32(out, static_cast<std::uint32_t>(num_classes_));
    evdx::put_u32(out, static_cast<std::uint32_t>(in_channels_));
    evdx::put_u32(out, static_cast<std::uint32_t>(image_size_));
    evdx::put_u32(out, kNumBlocks);
    for (int c : kBlockChannels) evdx::put_u32(out, static_cast<std::uint32_t>(c));
    evdx::put_u32(out, kKernelSize);
    const auto params = parameters();
    evdx::put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const Tensor& t : params) {
      evdx::put_u32(out, static_cast<std::uint32_t>(t.ndim()));
      for (int i = 0; i < t.ndim(); ++i) {
        evdx::put_u32(out, static_cast<std::uint32_t>(t.dim(i)));
      }
      const double* d = t.data();
      for (long long i = 0; i < t.numel(); ++i) evdx::put_f64(out, d[i]);
    }
  }

  static ClassifierModel deserialize(std::istream& in) {
    char magic[4] = {0, 0, 0, 0};
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, evdx::kMagic, 4) != 0) {
      throw FormatError(std::string("model file: expected magic 'EVDX', found '") +
                        std::string(magic, magic + std::max<std::streamsize>(in.gcount(), 0)) +
                        "'");
    }
    const int version = in.get();
    if (version == EOF) throw FormatError("model file: truncated (version)");
    if (version != evdx::kVersion) {
      throw FormatError("model file: unsupported version " + std::to_string(version) +
                        ", expected " + std::to_string(evdx::kVersion));
    }
    ClassifierModel m;
    m.num_classes_ = static_cast<int>(evdx::get_u32(in));
    m.in_channels_ = static_cast<int>(evdx::get_u32(in));
    m.image_size_ = static_cast<int>(evdx::get_u32(in));
    const auto n_blocks = evdx::get_u32(in);
    if (n_blocks != kNumBlocks) {
      throw FormatError("model file: unsupported block count " + std::to_string(n_blocks));
    }
    for (int b = 0; b < kNumBlocks; ++b) {
      const auto ch = evdx::get_u32(in);
      if (static_cast<int>(ch) != kBlockChannels[b]) {
        throw FormatError("model file: unexpected channel layout");
      }
    }
    if (evdx::get_u32(in) != kKernelSize) {
      throw FormatError("model file: unsupported kernel size");
    }
    const auto n_tensors = evdx::get_u32(in);
    if (n_tensors != 2 * kNumBlocks + 2) {
      throw FormatError("model file: unexpected tensor count " + std::to_string(n_tensors));
    }
    auto read_tensor = [&in]() {
      const auto ndim = evdx::get_u32(in);
      if (ndim < 1 || ndim > 4) throw FormatError("model file: bad tensor rank");
      std::vector<int> shape(ndim);
      long long numel = 1;
      for (auto& d : shape) {
        d = static_cast<int>(evdx::get_u32(in));
        if (d < 1 || d > 1 << 20) throw FormatError("model file: bad dimension");
        numel *= d;
      }
      std::vector<double> data(static_cast<std::size_t>(numel));
      for (double& v : data) v = evdx::get_f64(in);
      return Tensor::from(std::move(shape), std::move(data));
    };
    for (int b = 0; b < kNumBlocks; ++b) {
      m.kernels_[b] = read_tensor();
      m.conv_biases_[b] = read_tensor();
    }
    m.head_weight_ = read_tensor();
    m.head_bias_ = read_tensor();
    m.freeze();
    return m;
  }

  static constexpr int kNumBlocks = 3;
  static constexpr int kBlockChannels[kNumBlocks] = {16, 32, 64};
  static constexpr std::uint32_t kKernelSize = 3;

 private:
  static Tensor he_kernel(Rng& rng, int out_ch, int in_ch, int k) {
    Tensor t = Tensor::zeros({out_ch, in_ch, k, k}, true);
    const double std_dev = std::sqrt(2.0 / (in_ch * k * k));
    double* d = t.data();
    for (long long i = 0; i < t.numel(); ++i) d[i] = std_dev * rng.normal();
    return t;
  }

  std::vector<Tensor> all_params() {
    std::vector<Tensor> out;
    for (int b = 0; b < kNumBlocks; ++b) {
      out.push_back(kernels_[b]);
      out.push_back(conv_biases_[b]);
    }
    out.push_back(head_weight_);
    out.push_back(head_bias_);
    return out;
  }

  int num_classes_ = 4;
  int in_channels_ = 3;
  int image_size_ = 64;
  bool frozen_ = false;
  Tensor kernels_[kNumBlocks];
  Tensor conv_biases_[kNumBlocks];
  Tensor head_weight_;
  Tensor head_bias_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainOptions {
  int epochs = 20;
  double lr = 1e-3;
  std::uint64_t seed = 42;
  int batch_size = 16;
};

struct TrainReport {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<std::uint64_t> epoch_weight_hashes;
};

/// Fraction of images whose argmax logit matches the label.
inline double accuracy(const ClassifierModel& model,
                       const std::vector<SynthImage>& images, int batch_size = 32) {
  if (images.empty()) throw DataError("accuracy: empty image set");
  const int s = model.image_size();
  long long correct = 0;
  for (std::size_t start = 0; start < images.size();
       start += static_cast<std::size_t>(batch_size)) {
    const int b = static_cast<int>(
        std::min<std::size_t>(batch_size, images.size() - start));
    Tensor batch = Tensor::zeros({b, 3, s, s});
    for (int i = 0; i < b; ++i) {
      std::memcpy(batch.data() + static_cast<long long>(i) * 3 * s * s,
                  images[start + i].pixels.data(), sizeof(double) * 3 * s * s);
    }
    Tape tape;
    const Tensor logits = model.forward_with_taps(tape, batch).logits;
    for (int i = 0; i < b; ++i) {
      const double* row = logits.data() + static_cast<long long>(i) * model.num_classes();
      int best = 0;
      for (int c = 1; c < model.num_classes(); ++c) {
        if (row[c] > row[best]) best = c;
      }
      if (best == images[start + i].label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

/// Trains a fresh model on the train split and returns it frozen. Fully
/// deterministic for a fixed seed: initialization, shuffling, and batching
/// all derive from it.
inline ClassifierModel train_classifier(const std::vector<SynthImage>& train,
                                        const std::vector<SynthImage>& test,
                                        const TrainOptions& opt,
                                        TrainReport* report = nullptr) {
  if (train.empty()) throw DataError("train_classifier: empty corpus");
  std::vector<long long> class_counts;
  for (const auto& img : train) {
    if (img.label >= static_cast<int>(class_counts.size())) {
      class_counts.resize(static_cast<std::size_t>(img.label) + 1, 0);
    }
    ++class_counts[static_cast<std::size_t>(img.label)];
  }
  int present = 0;
  for (long long c : class_counts) {
    if (c > 0 && c < 50) {
      throw DataError("train_classifier: every class needs >= 50 images");
    }
    if (c > 0) ++present;
  }
  if (present < 2) throw DataError("train_classifier: need >= 2 classes");
  if (opt.epochs < 1) throw ParameterError("train_classifier: epochs must be >= 1");
  if (!(opt.lr > 0.0)) throw ParameterError("train_classifier: lr must be positive");

  const int num_classes = static_cast<int>(class_counts.size());
  const int s = train.front().size();
  ClassifierModel model = ClassifierModel::random_init(opt.seed, num_classes, 3, s);
  Adam adam(model.parameters(), AdamConfig{opt.lr, 0.9, 0.999, 1e-8});
  Rng shuffle_rng(Rng::mix(opt.seed, 0x73687566ULL));

  std::vector<int> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
      const int j = shuffle_rng.uniform_int(i + 1);
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(opt.batch_size)) {
      const int b = static_cast<int>(
          std::min<std::size_t>(opt.batch_size, order.size() - start));
      Tensor batch = Tensor::zeros({b, 3, s, s});
      std::vector<int> labels(static_cast<std::size_t>(b));
      for (int i = 0; i < b; ++i) {
        const SynthImage& img = train[static_cast<std::size_t>(order[start + i])];
        std::memcpy(batch.data() + static_cast<long long>(i) * 3 * s * s,
                    img.pixels.data(), sizeof(double) * 3 * s * s);
        labels[static_cast<std::size_t>(i)] = img.label;
      }
      Tape tape;
      const Tensor logits = model.forward_with_taps(tape, batch).logits;
      const Tensor loss = cross_entropy_logits(tape, logits, labels);
      adam.zero_grad();
      backward(loss, tape);
      adam.step();
    }
    if (report) report->epoch_weight_hashes.push_back(model.weight_hash());
  }

  if (report) {
    report->train_accuracy = accuracy(model, train);
    report->test_accuracy = test.empty() ? 0.0 : accuracy(model, test);
  }
  model.freeze();
  return model;
}

}  // namespace medcam
