#include "bhfa/attention.hpp"

#include <cmath>

#include "bhfa/errors.hpp"

namespace bhfa {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_feature_map(const Tensor& phi) {
  require(phi.ndim() == 3 && phi.dim(0) >= 1 && phi.dim(1) >= 1 && phi.dim(2) >= 1,
          "attention: feature map must be (C,H,W), got " + phi.shape_str());
}

}  // namespace

void AttentionParams::validate(int channels) const {
  require(r >= 1 && channels % r == 0, "AttentionParams: r must divide C");
  const int hidden = channels / r;
  require(mlp_w0.ndim() == 2 && mlp_w0.dim(0) == hidden && mlp_w0.dim(1) == channels,
          "AttentionParams: mlp_w0 must be (C/r, C)");
  require(mlp_w1.ndim() == 2 && mlp_w1.dim(0) == channels && mlp_w1.dim(1) == hidden,
          "AttentionParams: mlp_w1 must be (C, C/r)");
  require(spatial_kernel.ndim() == 4 && spatial_kernel.dim(0) == 1 && spatial_kernel.dim(1) == 2 &&
              spatial_kernel.dim(2) == 7 && spatial_kernel.dim(3) == 7,
          "AttentionParams: spatial_kernel must be (1,2,7,7)");
}

std::vector<double> channel_attention(const Tensor& phi, const AttentionParams& params) {
  check_feature_map(phi);
  const int c = phi.dim(0), h = phi.dim(1), w = phi.dim(2);
  params.validate(c);
  const int hidden = c / params.r;

  std::vector<double> avg(static_cast<std::size_t>(c)), mx(static_cast<std::size_t>(c));
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (int ic = 0; ic < c; ++ic) {
    const double* src = phi.data() + static_cast<std::size_t>(ic) * h * w;
    double acc = src[0], best = src[0];
    for (int i = 1; i < h * w; ++i) {
      acc += src[i];
      if (src[i] > best) best = src[i];
    }
    avg[static_cast<std::size_t>(ic)] = acc * inv;
    mx[static_cast<std::size_t>(ic)] = best;
  }

  auto mlp = [&](const std::vector<double>& x) {
    std::vector<double> mid(static_cast<std::size_t>(hidden), 0.0);
    for (int i = 0; i < hidden; ++i) {
      double acc = 0.0;
      for (int j = 0; j < c; ++j) acc += params.mlp_w0.at(i, j) * x[static_cast<std::size_t>(j)];
      mid[static_cast<std::size_t>(i)] = acc;
    }
    std::vector<double> out(static_cast<std::size_t>(c), 0.0);
    for (int i = 0; i < c; ++i) {
      double acc = 0.0;
      for (int j = 0; j < hidden; ++j) acc += params.mlp_w1.at(i, j) * mid[static_cast<std::size_t>(j)];
      out[static_cast<std::size_t>(i)] = acc;
    }
    return out;
  };

  std::vector<double> gate_avg = mlp(avg);
  std::vector<double> gate_max = mlp(mx);
  std::vector<double> gate(static_cast<std::size_t>(c));
  for (int i = 0; i < c; ++i)
    gate[static_cast<std::size_t>(i)] =
        sigmoid(gate_avg[static_cast<std::size_t>(i)] + gate_max[static_cast<std::size_t>(i)]);
  return gate;
}

Tensor spatial_attention(const Tensor& phi, const AttentionParams& params) {
  check_feature_map(phi);
  const int c = phi.dim(0), h = phi.dim(1), w = phi.dim(2);
  params.validate(c);

  // stacked channel statistics: plane 0 = mean over C, plane 1 = max over C
  Tensor stats({2, h, w});
  const double inv = 1.0 / static_cast<double>(c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0, best = phi.at(0, y, x);
      for (int ic = 0; ic < c; ++ic) {
        const double v = phi.at(ic, y, x);
        acc += v;
        if (v > best) best = v;
      }
      stats.at(0, y, x) = acc * inv;
      stats.at(1, y, x) = best;
    }

  constexpr int pad = 3, k = 7;
  Tensor out({1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int p = 0; p < 2; ++p)
        for (int ky = 0; ky < k; ++ky) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int sx = x + kx - pad;
            if (sx < 0 || sx >= w) continue;
            acc += params.spatial_kernel.at(0, p, ky, kx) * stats.at(p, sy, sx);
          }
        }
      out.at(0, y, x) = sigmoid(acc);
    }
  return out;
}

Tensor apply_attention(const Tensor& phi, const AttentionParams& params) {
  check_feature_map(phi);
  const int c = phi.dim(0), h = phi.dim(1), w = phi.dim(2);

  std::vector<double> gate = channel_attention(phi, params);
  Tensor scaled = phi;
  for (int ic = 0; ic < c; ++ic) {
    double* dst = scaled.data() + static_cast<std::size_t>(ic) * h * w;
    for (int i = 0; i < h * w; ++i) dst[i] *= gate[static_cast<std::size_t>(ic)];
  }

  Tensor mask = spatial_attention(scaled, params);
  for (int ic = 0; ic < c; ++ic) {
    double* dst = scaled.data() + static_cast<std::size_t>(ic) * h * w;
    const double* msk = mask.data();
    for (int i = 0; i < h * w; ++i) dst[i] *= msk[i];
  }
  return scaled;
}

}  // namespace bhfa
