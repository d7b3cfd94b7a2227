#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "transcp/autodiff.hpp"
#include "transcp/kernels.hpp"
#include "transcp/rng.hpp"

namespace transcp {

template <typename T>
struct AssignmentResult {
  std::vector<int> indices;  // chosen prototype per cell
  Tensor<T> quantized;       // {C,N}: column i = prototypes[indices[i]]
  Tensor<T> distances;       // {N}: Euclidean distance to the chosen prototype
};

// Bank of cluster-level prototype vectors. During training the prototypes
// follow momentum-averaged cluster statistics; at inference the bank is
// frozen and acts as a pure lookup table. Prototypes never receive gradients:
// the quantization passes gradients straight through to its input.
template <typename T>
class PrototypeBank {
 public:
  enum class Mode { training, frozen };

  PrototypeBank() = default;
  PrototypeBank(size_t k, size_t channels, T momentum)
      : k_(k),
        channels_(channels),
        momentum_(momentum),
        prototypes_({k, channels}),
        ema_counts_({k}),
        ema_sums_({k, channels}) {
    TCP_CHECK(k >= 1, "prototype bank: k must be >= 1, got ", k);
    TCP_CHECK(momentum > T(0) && momentum < T(1),
              "prototype bank: momentum must lie in (0,1), got ", momentum);
  }

  size_t size() const { return k_; }
  size_t channels() const { return channels_; }
  T momentum() const { return momentum_; }
  Mode mode() const { return mode_; }
  bool frozen() const { return mode_ == Mode::frozen; }
  bool initialized() const { return initialized_; }
  const Tensor<T>& prototypes() const { return prototypes_; }
  const Tensor<T>& ema_counts() const { return ema_counts_; }
  const Tensor<T>& ema_sums() const { return ema_sums_; }

  // Cold start: prototypes are seeded from feature columns of the first
  // training batch, sampled without replacement.
  void initialize_from(const Tensor<T>& features, Rng& rng) {
    TCP_CHECK(features.ndim() == 2 && features.size(0) == channels_,
              "bank init: features must be {", channels_, ",N}, got ",
              shape_str(features.shape()));
    size_t n = features.size(1);
    TCP_CHECK(n >= k_, "bank init: need at least ", k_, " feature cells, got ",
              n);
    auto cells = rng.sample_without_replacement(n, k_);
    for (size_t p = 0; p < k_; ++p)
      for (size_t c = 0; c < channels_; ++c)
        prototypes_.at(p, c) = features.at(c, cells[p]);
    initialized_ = true;
  }

  void set_prototypes(const Tensor<T>& protos) {
    TCP_CHECK(protos.same_shape(prototypes_), "bank: prototype shape ",
              shape_str(protos.shape()), " != ", shape_str(prototypes_.shape()));
    prototypes_ = protos;
    initialized_ = true;
  }

  // Nearest-neighbor assignment per cell (Euclidean, ties to lowest index).
  AssignmentResult<T> assign(const Tensor<T>& features) const {
    TCP_CHECK(initialized_,
              "prototype bank is empty: initialize it before assigning");
    TCP_CHECK(features.ndim() == 2 && features.size(0) == channels_,
              "assign: features must be {", channels_, ",N}, got ",
              shape_str(features.shape()));
    size_t n = features.size(1);
    AssignmentResult<T> out;
    out.indices.resize(n);
    out.distances = Tensor<T>({n});
    kernels::nearest_prototype(features.data(), prototypes_.data(), channels_,
                               n, k_, out.indices.data(),
                               out.distances.data());
    out.quantized = Tensor<T>({channels_, n});
    for (size_t i = 0; i < n; ++i)
      for (size_t c = 0; c < channels_; ++c)
        out.quantized.at(c, i) = prototypes_.at(size_t(out.indices[i]), c);
    return out;
  }

  // Quantized forward value with an identity gradient into `features`.
  Var<T> quantize(const Var<T>& features,
                  const AssignmentResult<T>& assignment) const {
    return straight_through(features, assignment.quantized);
  }

  // Momentum-average update over one batch of assigned features. Prototypes
  // with no assigned cells this batch keep their statistics untouched.
  void ema_update(const Tensor<T>& features,
                  const std::vector<int>& indices) {
    TCP_CHECK(mode_ == Mode::training,
              "ema_update on a frozen prototype bank");
    TCP_CHECK(initialized_, "ema_update before bank initialization");
    TCP_CHECK(features.ndim() == 2 && features.size(0) == channels_ &&
                  features.size(1) == indices.size(),
              "ema_update: features/indices mismatch");
    size_t n = indices.size();
    std::vector<T> batch_counts(k_, T(0));
    Tensor<T> batch_sums({k_, channels_});
    for (size_t i = 0; i < n; ++i) {
      size_t p = size_t(indices[i]);
      TCP_CHECK(p < k_, "ema_update: index ", indices[i], " out of range ", k_);
      batch_counts[p] += T(1);
      for (size_t c = 0; c < channels_; ++c)
        batch_sums.at(p, c) += features.at(c, i);
    }
    const T m = momentum_;
    for (size_t p = 0; p < k_; ++p) {
      if (batch_counts[p] == T(0)) continue;  // nonzero-count gate
      ema_counts_[p] = m * ema_counts_[p] + (T(1) - m) * batch_counts[p];
      for (size_t c = 0; c < channels_; ++c) {
        ema_sums_.at(p, c) =
            m * ema_sums_.at(p, c) + (T(1) - m) * batch_sums.at(p, c);
        prototypes_.at(p, c) = ema_sums_.at(p, c) / ema_counts_[p];
      }
    }
  }

  void ema_update(const Tensor<T>& features,
                  const AssignmentResult<T>& assignment) {
    ema_update(features, assignment.indices);
  }

  void freeze() { mode_ = Mode::frozen; }
  void unfreeze() { mode_ = Mode::training; }

  // ---- bank file: header + little-endian float32 payload ----

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    TCP_CHECK(os.good(), "cannot open bank file for writing: ", path);
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u32(os, uint32_t(k_));
    write_u32(os, uint32_t(channels_));
    float mom = float(momentum_);
    os.write(reinterpret_cast<const char*>(&mom), 4);
    uint8_t flags = (frozen() ? 1 : 0) | (initialized_ ? 2 : 0);
    os.write(reinterpret_cast<const char*>(&flags), 1);
    write_block(os, prototypes_);
    write_block(os, ema_counts_);
    write_block(os, ema_sums_);
    TCP_CHECK(os.good(), "failed writing bank file: ", path);
  }

  static PrototypeBank load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    TCP_CHECK(is.good(), "cannot open bank file: ", path);
    char magic[4] = {};
    is.read(magic, 4);
    TCP_CHECK(is.good() && std::equal(magic, magic + 4, kMagic), path,
              ": bad bank magic at offset 0");
    uint32_t version = read_u32(is, path, "version");
    TCP_CHECK(version == kVersion, path, ": unsupported bank version ",
              version);
    uint32_t k = read_u32(is, path, "k");
    uint32_t channels = read_u32(is, path, "channels");
    float mom = 0;
    is.read(reinterpret_cast<char*>(&mom), 4);
    uint8_t flags = 0;
    is.read(reinterpret_cast<char*>(&flags), 1);
    TCP_CHECK(is.good(), path, ": truncated header at offset ",
              std::streamoff(is.tellg()));
    PrototypeBank bank(k, channels, T(mom));
    bank.initialized_ = (flags & 2) != 0;
    bank.mode_ = (flags & 1) ? Mode::frozen : Mode::training;
    read_block(is, path, "prototypes", bank.prototypes_);
    read_block(is, path, "ema_counts", bank.ema_counts_);
    read_block(is, path, "ema_sums", bank.ema_sums_);
    is.peek();
    TCP_CHECK(is.eof(), path, ": trailing bytes at offset ",
              std::streamoff(is.tellg()));
    return bank;
  }

  // Load with a shape expectation, for attaching to a configured model.
  static PrototypeBank load(const std::string& path, size_t expected_k,
                            size_t expected_channels) {
    PrototypeBank bank = load(path);
    TCP_CHECK(bank.size() == expected_k, path, ": bank has k=", bank.size(),
              ", expected k=", expected_k);
    TCP_CHECK(bank.channels() == expected_channels, path,
              ": bank has C=", bank.channels(), ", expected C=",
              expected_channels);
    return bank;
  }

 private:
  static constexpr char kMagic[4] = {'T', 'C', 'P', 'B'};
  static constexpr uint32_t kVersion = 1;

  static void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
  }
  static uint32_t read_u32(std::istream& is, const std::string& path,
                           const char* what) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    TCP_CHECK(is.good(), path, ": truncated while reading ", what,
              " at offset ", std::streamoff(is.tellg()));
    return v;
  }
  static void write_block(std::ostream& os, const Tensor<T>& t) {
    std::vector<float> buf(t.numel());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = float(t[i]);
    os.write(reinterpret_cast<const char*>(buf.data()),
             std::streamsize(buf.size() * sizeof(float)));
  }
  static void read_block(std::istream& is, const std::string& path,
                         const char* what, Tensor<T>& t) {
    std::vector<float> buf(t.numel());
    is.read(reinterpret_cast<char*>(buf.data()),
            std::streamsize(buf.size() * sizeof(float)));
    TCP_CHECK(is.good(), path, ": truncated ", what, " block at offset ",
              std::streamoff(is.tellg()));
    for (size_t i = 0; i < buf.size(); ++i) t[i] = T(buf[i]);
  }

  size_t k_ = 0, channels_ = 0;
  T momentum_ = T(0.9);
  Mode mode_ = Mode::training;
  bool initialized_ = false;
  Tensor<T> prototypes_;
  Tensor<T> ema_counts_;
  Tensor<T> ema_sums_;
};

}  // namespace transcp
