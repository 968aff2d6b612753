#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bhfa/attention.hpp"
#include "bhfa/autodiff.hpp"
#include "bhfa/distributions.hpp"
#include "bhfa/tensor.hpp"

namespace bhfa {

// Shape of the convolutional trunk. Each block halves the spatial side, so
// `side` must be divisible by 2^blocks.
struct Arch {
  int in_channels = 1;
  int side = 32;
  std::vector<int> widths = {16, 32, 64};
  int latent_dim = 32;
  std::vector<int> reductions;  // empty -> reduction_ratio(width) per block

  int blocks() const { return static_cast<int>(widths.size()); }
  int min_side() const { return side >> blocks(); }
  int reduction_for(int block) const;
  void validate() const;
  bool operator==(const Arch& other) const;
};

// Convolutional encoder with one attention block per conv block, affine
// (mu, log_std) heads over the globally pooled features, and a mirror
// upsampling decoder. Parameters live in one flat list whose order defines
// the checkpoint layout and the optimizer slot order.
class EncoderModel {
 public:
  explicit EncoderModel(Arch arch);

  // Uniform +-sqrt(1/fan_in) weights drawn in parameter order; biases zero
  // except the log_std head bias at -1 (initial sigma ~ 0.37). Biases consume
  // no draws.
  void init_params(std::uint64_t seed);

  const Arch& arch() const { return arch_; }
  std::size_t param_count() const;  // total scalar count
  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  const std::string& param_name(std::size_t i) const { return names_[i]; }

  // ---- tape graph builders (batched NCHW) ----
  std::vector<ad::Var> make_vars(ad::Tape& t, bool requires_grad) const;
  // x: (N, in_channels, side, side) -> mu (N,d), log_std (N,d) clamped
  std::pair<ad::Var, ad::Var> encode_vars(ad::Tape& t, const std::vector<ad::Var>& p, ad::Var x) const;
  // z: (N,d) -> reconstruction (N, in_channels, side, side) in (0,1)
  ad::Var decode_vars(ad::Tape& t, const std::vector<ad::Var>& p, ad::Var z) const;

  // ---- plain forward (no gradients; same graph code as training) ----
  std::pair<Tensor, Tensor> encode_batch(const Tensor& x) const;
  DiagGaussian encode(const Tensor& image) const;  // (C,H,W)
  Tensor decode_batch(const Tensor& z) const;      // (N,d) -> (N,C,H,W)
  Tensor decode(const std::vector<double>& z) const;

  AttentionParams attention_params(int block) const;

 private:
  Arch arch_;
  std::vector<Tensor> params_;
  std::vector<std::string> names_;

  // offsets into params_
  std::size_t block_base(int b) const { return static_cast<std::size_t>(b) * 5; }
  std::size_t head_base() const { return static_cast<std::size_t>(arch_.blocks()) * 5; }
  std::size_t dec_base() const { return head_base() + 4; }
};

// Adam accumulator slots, one pair per parameter tensor in declaration order.
struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<Tensor> m, v;
};

// Binary checkpoint: magic "BHFA1"; architecture header (u32 in_channels,
// side, latent_dim, n_blocks, then per block u32 width and reduction); u32
// parameter count; each parameter as u32 ndim, u32 dims, little-endian f64
// data. An optional optimizer trailer follows: magic "ADAM1", u64 step, then
// m and v arrays (shapes implied by the parameters). Round-trip is bit-exact.
void save_checkpoint(const std::string& path, const EncoderModel& model,
                     const OptimizerState* opt = nullptr);

struct LoadedCheckpoint {
  EncoderModel model;
  std::optional<OptimizerState> opt;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace bhfa
