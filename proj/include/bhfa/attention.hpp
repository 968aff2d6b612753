#pragma once

#include <vector>

#include "bhfa/tensor.hpp"

namespace bhfa {

// Channel-reduction ratio convention for the gating MLP.
inline int reduction_ratio(int channels) { return channels < 16 ? 4 : 8; }

// Parameters of one attention block over a C-channel feature map. The gating
// MLP is bias-free and shared between the average- and max-pooled branches;
// the spatial filter is a bias-free 7x7 convolution over the stacked
// channel-mean and channel-max maps.
struct AttentionParams {
  Tensor mlp_w0;          // (C/r, C) reduction
  Tensor mlp_w1;          // (C, C/r) expansion
  Tensor spatial_kernel;  // (1, 2, 7, 7)
  int r = 8;

  void validate(int channels) const;
};

// Per-channel gate in (0,1): sigmoid(MLP(avgpool) + MLP(maxpool)), pools
// taken over H*W per channel. `phi` is (C,H,W).
std::vector<double> channel_attention(const Tensor& phi, const AttentionParams& params);

// Per-position gate in (0,1): sigmoid(conv7x7(pad 3) over the (2,H,W) stack
// of channel-mean and channel-max maps). Returns (1,H,W).
Tensor spatial_attention(const Tensor& phi, const AttentionParams& params);

// Channel gate first, then the spatial gate computed from the channel-scaled
// map; output shape equals input shape.
Tensor apply_attention(const Tensor& phi, const AttentionParams& params);

}  // namespace bhfa
