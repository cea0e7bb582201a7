#include "mgnet/kernels.hpp"

#include <algorithm>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mgnet {

namespace {
int g_thread_limit = 0;
}

void set_thread_limit(int threads) {
  g_thread_limit = threads > 0 ? threads : 0;
#ifdef _OPENMP
  if (g_thread_limit > 0) {
    omp_set_num_threads(g_thread_limit);
  } else {
    omp_set_num_threads(omp_get_num_procs());
  }
#endif
}

int thread_limit() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace mgnet

namespace mgnet::kernels {

namespace {

std::vector<Real> pad_planes(const ConvGeometry& g, std::span<const Real> in) {
  const int ph = g.padded_height();
  const int pw = g.padded_width();
  std::vector<Real> padded(static_cast<std::size_t>(g.in_channels) * ph * pw, Real(0));
  std::vector<int> cols(pw);
  for (int x = 0; x < pw; ++x) cols[x] = resolve_index(x - g.k, g.width, g.padding);
  for (int c = 0; c < g.in_channels; ++c) {
    const Real* src = in.data() + static_cast<std::size_t>(c) * g.height * g.width;
    Real* dst = padded.data() + static_cast<std::size_t>(c) * ph * pw;
    for (int y = 0; y < ph; ++y) {
      const int ry = resolve_index(y - g.k, g.height, g.padding);
      if (ry < 0) continue;
      for (int x = 0; x < pw; ++x) {
        if (cols[x] >= 0) dst[y * pw + x] = src[ry * g.width + cols[x]];
      }
    }
  }
  return padded;
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const Real> in,
                    std::span<const Real> weights, std::span<const Real> bias,
                    std::span<Real> out) {
  const std::vector<Real> padded = pad_planes(g, in);
  const int oh = g.out_height();
  const int ow = g.out_width();
  const int ph = g.padded_height();
  const int pw = g.padded_width();
  const int win = g.window();
  const int s = g.stride;
  const int channels_out = g.out_channels;

#pragma omp parallel for schedule(static)
  for (int o = 0; o < channels_out; ++o) {
    Real* dst = out.data() + static_cast<std::size_t>(o) * oh * ow;
    std::fill(dst, dst + static_cast<std::size_t>(oh) * ow, bias.empty() ? Real(0) : bias[o]);
    for (int c = 0; c < g.in_channels; ++c) {
      const Real* plane = padded.data() + static_cast<std::size_t>(c) * ph * pw;
      const Real* w = weights.data() + (static_cast<std::size_t>(o) * g.in_channels + c) * win * win;
      for (int p = 0; p < win; ++p) {
        for (int q = 0; q < win; ++q) {
          const Real wv = w[p * win + q];
          for (int i = 0; i < oh; ++i) {
            const Real* src = plane + static_cast<std::size_t>(s * i + p) * pw + q;
            Real* row = dst + static_cast<std::size_t>(i) * ow;
            if (s == 1) {
              for (int j = 0; j < ow; ++j) row[j] += wv * src[j];
            } else {
              for (int j = 0; j < ow; ++j) row[j] += wv * src[s * j];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const Real> grad_out,
                           std::span<const Real> weights, std::span<Real> grad_in) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  const int ph = g.padded_height();
  const int pw = g.padded_width();
  const int win = g.window();
  const int s = g.stride;
  const int channels_in = g.in_channels;

  std::vector<int> cols(pw);
  for (int x = 0; x < pw; ++x) cols[x] = resolve_index(x - g.k, g.width, g.padding);

#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels_in; ++c) {
    std::vector<Real> gpad(static_cast<std::size_t>(ph) * pw, Real(0));
    for (int o = 0; o < g.out_channels; ++o) {
      const Real* go = grad_out.data() + static_cast<std::size_t>(o) * oh * ow;
      const Real* w = weights.data() + (static_cast<std::size_t>(o) * g.in_channels + c) * win * win;
      for (int p = 0; p < win; ++p) {
        for (int q = 0; q < win; ++q) {
          const Real wv = w[p * win + q];
          for (int i = 0; i < oh; ++i) {
            Real* dst = gpad.data() + static_cast<std::size_t>(s * i + p) * pw + q;
            const Real* row = go + static_cast<std::size_t>(i) * ow;
            for (int j = 0; j < ow; ++j) dst[s * j] += wv * row[j];
          }
        }
      }
    }
    Real* gi = grad_in.data() + static_cast<std::size_t>(c) * g.height * g.width;
    for (int y = 0; y < ph; ++y) {
      const int ry = resolve_index(y - g.k, g.height, g.padding);
      if (ry < 0) continue;
      for (int x = 0; x < pw; ++x) {
        if (cols[x] >= 0) gi[ry * g.width + cols[x]] += gpad[static_cast<std::size_t>(y) * pw + x];
      }
    }
  }
}

void conv2d_backward_params(const ConvGeometry& g, std::span<const Real> in,
                            std::span<const Real> grad_out, std::span<Real> grad_weights,
                            std::span<Real> grad_bias) {
  const std::vector<Real> padded = pad_planes(g, in);
  const int oh = g.out_height();
  const int ow = g.out_width();
  const int ph = g.padded_height();
  const int pw = g.padded_width();
  const int win = g.window();
  const int s = g.stride;
  const int channels_out = g.out_channels;

#pragma omp parallel for schedule(static)
  for (int o = 0; o < channels_out; ++o) {
    const Real* go = grad_out.data() + static_cast<std::size_t>(o) * oh * ow;
    if (!grad_bias.empty()) {
      Real acc = 0;
      for (int n = 0; n < oh * ow; ++n) acc += go[n];
      grad_bias[o] += acc;
    }
    for (int c = 0; c < g.in_channels; ++c) {
      const Real* plane = padded.data() + static_cast<std::size_t>(c) * ph * pw;
      Real* gw = grad_weights.data() + (static_cast<std::size_t>(o) * g.in_channels + c) * win * win;
      for (int p = 0; p < win; ++p) {
        for (int q = 0; q < win; ++q) {
          Real acc = 0;
          for (int i = 0; i < oh; ++i) {
            const Real* src = plane + static_cast<std::size_t>(s * i + p) * pw + q;
            const Real* row = go + static_cast<std::size_t>(i) * ow;
            for (int j = 0; j < ow; ++j) acc += row[j] * src[s * j];
          }
          gw[p * win + q] += acc;
        }
      }
    }
  }
}

void conv2d_reference(const ConvGeometry& g, std::span<const Real> in,
                      std::span<const Real> weights, std::span<const Real> bias,
                      std::span<Real> out) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  const int win = g.window();
  for (int o = 0; o < g.out_channels; ++o) {
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        Real acc = bias.empty() ? Real(0) : bias[o];
        for (int c = 0; c < g.in_channels; ++c) {
          for (int p = -g.k; p <= g.k; ++p) {
            for (int q = -g.k; q <= g.k; ++q) {
              const int y = resolve_index(g.stride * i + p, g.height, g.padding);
              const int x = resolve_index(g.stride * j + q, g.width, g.padding);
              const Real sample =
                  (y < 0 || x < 0)
                      ? Real(0)
                      : in[(static_cast<std::size_t>(c) * g.height + y) * g.width + x];
              const Real w =
                  weights[((static_cast<std::size_t>(o) * g.in_channels + c) * win + (p + g.k)) *
                              win +
                          (q + g.k)];
              acc += w * sample;
            }
          }
        }
        out[(static_cast<std::size_t>(o) * oh + i) * ow + j] = acc;
      }
    }
  }
}

void max_pool_forward(int channels, int height, int width, int k, int stride,
                      std::span<const Real> in, std::span<Real> out, std::span<int> argmax) {
  const int oh = strided_extent(height, stride);
  const int ow = strided_extent(width, stride);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    const std::size_t base = static_cast<std::size_t>(c) * height * width;
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        Real best = -std::numeric_limits<Real>::infinity();
        int where = -1;
        for (int p = -k; p <= k; ++p) {
          for (int q = -k; q <= k; ++q) {
            const int y = stride * i + p;
            const int x = stride * j + q;
            const bool inside = y >= 0 && y < height && x >= 0 && x < width;
            const Real v = inside ? in[base + static_cast<std::size_t>(y) * width + x] : Real(0);
            if (v > best) {
              best = v;
              where = inside ? static_cast<int>(base + static_cast<std::size_t>(y) * width + x) : -1;
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(c) * oh + i) * ow + j;
        out[o] = best;
        argmax[o] = where;
      }
    }
  }
}

}  // namespace mgnet::kernels
