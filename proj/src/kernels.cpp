#include "aggfov/kernels.hpp"

#include <cstring>
#include <algorithm>
#include <type_traits>
#include <vector>

#ifdef __AVX512F__
#include <immintrin.h>
#endif

namespace aggfov::kern {
namespace {

// Per-sample zero-padded copy of one input image, pad p on every side, with
// 32 floats of slack at the end so full-width vector loads never fault.
// The buffer never shrinks, and border strips are re-zeroed only when the
// geometry changes, so refills across a batch copy just the interior rows.
struct PaddedInput {
  std::vector<float> buf;
  int64_t hp = 0, wp = 0;
  int64_t last_cin = -1, last_h = -1, last_w = -1, last_p = -1, last_n = -1;

  void fill(const float* in, int64_t cin, int64_t h, int64_t w, int64_t p) {
    hp = h + 2 * p;
    wp = w + 2 * p;
    const size_t need = static_cast<size_t>(cin * hp * wp + 32);
    if (buf.size() < need) {
      buf.resize(need);
      last_cin = -1;
    }
    const bool zero_borders = cin != last_cin || h != last_h || w != last_w ||
                              p != last_p || last_n != 1;
    last_cin = cin, last_h = h, last_w = w, last_p = p;
    last_n = 1;
    for (int64_t ci = 0; ci < cin; ++ci) {
      float* base = buf.data() + ci * hp * wp;
      if (zero_borders) {
        std::memset(base, 0, sizeof(float) * p * wp);
        std::memset(base + (p + h) * wp, 0, sizeof(float) * p * wp);
      }
      for (int64_t y = 0; y < h; ++y) {
        float* row = base + (y + p) * wp;
        if (zero_borders) {
          std::memset(row, 0, sizeof(float) * p);
          std::memset(row + p + w, 0, sizeof(float) * p);
        }
        std::memcpy(row + p, in + (ci * h + y) * w, sizeof(float) * w);
      }
    }
    if (zero_borders) std::memset(buf.data() + need - 32, 0, sizeof(float) * 32);
  }

  /// Stacks all n samples of each channel vertically in one padded image:
  /// channel ci occupies rows [0, p + n*(h+p)), sample s interior at rows
  /// [p + s*(h+p), p + s*(h+p) + h). The p-row gap between samples serves as
  /// both the bottom border of one sample and the top border of the next
  /// (taps only read, so the shared zero rows satisfy both).
  void fill_stacked(const float* in, int64_t n, int64_t cin, int64_t h,
                    int64_t w, int64_t p) {
    const int64_t slot = h + p;
    hp = p + n * slot;
    wp = w + 2 * p;
    const size_t need = static_cast<size_t>(cin * hp * wp + 32);
    if (buf.size() < need) {
      buf.resize(need);
      last_cin = -1;
    }
    const bool zero_borders = cin != last_cin || h != last_h || w != last_w ||
                              p != last_p || n != last_n;
    last_cin = cin, last_h = h, last_w = w, last_p = p, last_n = n;
    for (int64_t ci = 0; ci < cin; ++ci) {
      float* base = buf.data() + ci * hp * wp;
      if (zero_borders) std::memset(base, 0, sizeof(float) * p * wp);
      for (int64_t s = 0; s < n; ++s) {
        float* sb = base + (p + s * slot) * wp;
        if (zero_borders)
          std::memset(sb + h * wp, 0, sizeof(float) * p * wp);
        const float* src = in + (s * cin + ci) * h * w;
        for (int64_t y = 0; y < h; ++y) {
          float* row = sb + y * wp;
          if (zero_borders) {
            std::memset(row, 0, sizeof(float) * p);
            std::memset(row + p + w, 0, sizeof(float) * p);
          }
          std::memcpy(row + p, src + y * w, sizeof(float) * w);
        }
      }
    }
    if (zero_borders) std::memset(buf.data() + need - 32, 0, sizeof(float) * 32);
  }
};

#ifdef __AVX512F__

// Tap offsets into the padded buffer, one per (ci,dy,dx), matching the
// weight layout order ci*k*k + dy*k + dx.
void tap_offsets(int64_t cin, int64_t k, int64_t dilation, int64_t hp,
                 int64_t wp, std::vector<int64_t>& off) {
  off.resize(static_cast<size_t>(cin * k * k));
  size_t i = 0;
  for (int64_t ci = 0; ci < cin; ++ci)
    for (int64_t dy = 0; dy < k; ++dy)
      for (int64_t dx = 0; dx < k; ++dx)
        off[i++] = ci * hp * wp + dy * dilation * wp + dx * dilation;
}

// One 16-lane vector of flat output positions maps to up to 17 row segments
// of the padded input; loads are merged segment by segment so every lane is
// useful no matter how narrow the image is.
struct Seg {
  int64_t off;  // padded address for lane 0 of the vector (tap 0)
  __mmask16 mask;
};

struct VecSegs {
  __mmask16 store_mask;  // valid flat lanes
  int nseg;
  int64_t out_off;  // position of lane 0 in the unpadded output plane
  Seg seg[17];
};

// Segment table for flat positions [0, h*w) of an h x w plane inside a
// padded image with row stride wp. Offsets are relative to the padded
// top-left, matching the (dy=0, dx=0) tap.
void plane_segments(int64_t h, int64_t w, int64_t wp,
                    std::vector<VecSegs>& out, bool allow_row_aligned) {
  // Row-aligned mode: when w is not a multiple of 16 but the tail-lane waste
  // stays under 2x, give every vector a single contiguous input span (one
  // segment) instead of letting it wrap across rows. One load per tap beats
  // the merged multi-segment load by far more than the idle tail lanes cost.
  // Only worthwhile where the tap loop is FMA-bound (the forward kernel);
  // the load-bound weight-gradient kernel loses more to idle lanes. Small
  // planes are excluded too: with full-load-plus-blend merging, the packed
  // layout's full lane occupancy wins once rows are this short.
  if (allow_row_aligned && h * w > 512 && w % 16 != 0 &&
      16 * ((w + 15) / 16) < 2 * w) {
    const int64_t per_row = (w + 15) / 16;
    out.resize(static_cast<size_t>(h * per_row));
    size_t i = 0;
    for (int64_t r = 0; r < h; ++r)
      for (int64_t c0 = 0; c0 < w; c0 += 16) {
        VecSegs& vs = out[i++];
        const int64_t lanes = std::min<int64_t>(16, w - c0);
        vs.store_mask = static_cast<__mmask16>((1u << lanes) - 1u);
        vs.nseg = 1;
        vs.out_off = r * w + c0;
        vs.seg[0].off = r * wp + c0;
        vs.seg[0].mask = vs.store_mask;
      }
    return;
  }
  const int64_t total = h * w;
  const int64_t nvec = (total + 15) / 16;
  out.resize(static_cast<size_t>(nvec));
  for (int64_t v = 0; v < nvec; ++v) {
    const int64_t j0 = v * 16;
    out[v].out_off = j0;
    const int64_t lanes = std::min<int64_t>(16, total - j0);
    VecSegs& vs = out[v];
    vs.store_mask = static_cast<__mmask16>((1u << lanes) - 1u);
    vs.nseg = 0;
    int64_t lane = 0;
    while (lane < lanes) {
      const int64_t j = j0 + lane;
      const int64_t row = j / w, col = j % w;
      const int64_t span = std::min(w - col, lanes - lane);
      Seg& s = vs.seg[vs.nseg++];
      s.off = row * wp + col - lane;
      s.mask = static_cast<__mmask16>(((1u << span) - 1u) << lane);
      lane += span;
    }
  }
}

// Segment table for the vertically stacked batch layout of
// PaddedInput::fill_stacked: flat positions run sample-major row-major over
// all n samples, so lanes pack across sample boundaries with no idle tails.
void stacked_segments(int64_t n, int64_t h, int64_t w, int64_t wp,
                      int64_t slot, std::vector<VecSegs>& out) {
  const int64_t total = n * h * w;
  const int64_t nvec = (total + 15) / 16;
  out.resize(static_cast<size_t>(nvec));
  for (int64_t v = 0; v < nvec; ++v) {
    const int64_t j0 = v * 16;
    const int64_t lanes = std::min<int64_t>(16, total - j0);
    VecSegs& vs = out[v];
    vs.out_off = j0;
    vs.store_mask = static_cast<__mmask16>((1u << lanes) - 1u);
    vs.nseg = 0;
    int64_t lane = 0;
    while (lane < lanes) {
      const int64_t j = j0 + lane;
      const int64_t gr = j / w, col = j % w;
      const int64_t s = gr / h, r = gr % h;
      const int64_t span = std::min(w - col, lanes - lane);
      Seg& sg = vs.seg[vs.nseg++];
      sg.off = (s * slot + r) * wp + col - lane;
      sg.mask = static_cast<__mmask16>(((1u << span) - 1u) << lane);
      lane += span;
    }
  }
}

// Long-lived per-thread scratch: repeated multi-megabyte allocation and
// freeing per conv call costs more than the arithmetic at these sizes.
struct Scratch {
  PaddedInput pad;
  std::vector<int64_t> off;
  std::vector<float> wi;
  std::vector<float> stuffed;
  std::vector<float> panel;
  std::vector<float> dec;
  std::vector<VecSegs> segs;
};

Scratch& tls_scratch() {
  thread_local Scratch s;
  return s;
}

// Pads every vector's segment list with harmless mask-0 entries up to a
// uniform count so the inner loops can unroll without branching. Returns
// the padded count (1, 2, or 4), or 0 when a vector needs more than 4.
int pad_segments(std::vector<VecSegs>& segs) {
  int mx = 0;
  for (const auto& vs : segs) mx = std::max(mx, vs.nseg);
  const int ns = mx <= 1 ? 1 : mx <= 2 ? 2 : mx <= 4 ? 4 : 0;
  if (ns == 0) return 0;
  for (auto& vs : segs)
    while (vs.nseg < ns) {
      vs.seg[vs.nseg].off = vs.seg[0].off;
      vs.seg[vs.nseg].mask = 0;
      ++vs.nseg;
    }
  return ns;
}

// NS = padded segments per vector (0 selects a generic runtime loop)
template <int NS>
inline __m512 merged_load(const VecSegs& vs, const float* base) {
  // full-width loads + blend instead of merge-masked loads; see fwd_tile
  __m512 v = _mm512_loadu_ps(base + vs.seg[0].off);
  if constexpr (NS == 0) {
    for (int s = 1; s < vs.nseg; ++s)
      v = _mm512_mask_blend_ps(vs.seg[s].mask, v,
                               _mm512_loadu_ps(base + vs.seg[s].off));
  } else {
    for (int s = 1; s < NS; ++s)
      v = _mm512_mask_blend_ps(vs.seg[s].mask, v,
                               _mm512_loadu_ps(base + vs.seg[s].off));
  }
  return v;
}

// ---- forward, stride 1: CO output channels x VEC flat vectors per tile ----
// wi holds the co-block's weights interleaved tap-major: wi[t*CO + j].

// noinline: inlined clones of these hot loops lose their accumulator
// registers to the surrounding code and spill to the stack
template <int CO, int VEC, int NS>
__attribute__((noinline)) void fwd_tile(const VecSegs* vs, const float* pbase, const int64_t* off,
              int64_t ntaps, const float* wi, const float* bias,
              float* const* obase, bool accumulate) {
  __m512 acc[CO][VEC];
  for (int j = 0; j < CO; ++j) {
    const __m512 b = bias ? _mm512_set1_ps(bias[j]) : _mm512_setzero_ps();
    for (int v = 0; v < VEC; ++v)
      acc[j][v] = accumulate
                      ? _mm512_add_ps(b, _mm512_maskz_loadu_ps(
                                            vs[v].store_mask,
                                            obase[j] + vs[v].out_off))
                      : b;
  }
  // segment offsets/masks hoisted to locals so the tap loop loads only data
  constexpr int NSL = NS > 0 ? NS : 1;
  const float* sbase[VEC][NSL];
  __mmask16 smask[VEC][NSL];
  for (int v = 0; v < VEC; ++v)
    for (int s = 0; s < NSL; ++s) {
      sbase[v][s] = pbase + vs[v].seg[s].off;
      smask[v][s] = vs[v].seg[s].mask;
    }
  auto tap = [&](int64_t t) {
    const int64_t o = off[t];
    __m512 val[VEC];
    for (int v = 0; v < VEC; ++v) {
      if constexpr (NS > 0) {
        // full-width loads + blend: merge-masked loads are microcoded for
        // fault suppression and run several times slower. Every segment
        // offset is in-bounds (the buffer keeps 32 floats of slack).
        val[v] = _mm512_loadu_ps(sbase[v][0] + o);
        for (int s = 1; s < NSL; ++s)
          val[v] = _mm512_mask_blend_ps(smask[v][s], val[v],
                                        _mm512_loadu_ps(sbase[v][s] + o));
      } else {
        val[v] = merged_load<0>(vs[v], pbase + o);
      }
    }
    for (int j = 0; j < CO; ++j) {
      const __m512 wj = _mm512_set1_ps(wi[t * CO + j]);
      for (int v = 0; v < VEC; ++v)
        acc[j][v] = _mm512_fmadd_ps(wj, val[v], acc[j][v]);
    }
  };
  if constexpr (NS <= 1) {
#pragma GCC unroll 8
    for (int64_t t = 0; t < ntaps; ++t) tap(t);
  } else {
#pragma GCC unroll 4
    for (int64_t t = 0; t < ntaps; ++t) tap(t);
  }
  for (int j = 0; j < CO; ++j)
    for (int v = 0; v < VEC; ++v)
      _mm512_mask_storeu_ps(obase[j] + vs[v].out_off, vs[v].store_mask,
                            acc[j][v]);
}

template <int CO, int NS>
void fwd_block(const std::vector<VecSegs>& segs, const float* pbase,
               const int64_t* off, int64_t ntaps, const float* wi,
               const float* bias, float* out, int64_t plane, int64_t cout_all,
               int64_t n, int64_t co0, bool accumulate) {
  float* obase[CO];
  for (int j = 0; j < CO; ++j)
    obase[j] = out + (n * cout_all + co0 + j) * plane;
  const float* bias_blk = bias ? bias + co0 : nullptr;
  const int64_t nvec = static_cast<int64_t>(segs.size());
  int64_t v = 0;
  for (; v + 2 <= nvec; v += 2)
    fwd_tile<CO, 2, NS>(&segs[v], pbase, off, ntaps, wi, bias_blk, obase,
                        accumulate);
  for (; v < nvec; ++v)
    fwd_tile<CO, 1, NS>(&segs[v], pbase, off, ntaps, wi, bias_blk, obase,
                        accumulate);
}

template <int NS>
void fwd_all_blocks(const ConvGeom& g, const std::vector<VecSegs>& segs,
                    const float* pbase, const int64_t* off, int64_t ntaps,
                    const float* wi, const float* bias, float* out,
                    int64_t plane, int64_t n, bool accumulate,
                    int64_t ci0, int64_t ci1) {
  // [ci0, ci1): input-channel chunk; later chunks accumulate into out so a
  // chunk's padded rows stay cache-resident across every tile and co block
  const int64_t kk = ntaps / g.cin;
  const int64_t toff0 = ci0 * kk, ctaps = (ci1 - ci0) * kk;
  const bool acc_eff = accumulate || ci0 > 0;
  const float* bias_eff = ci0 > 0 ? nullptr : bias;
  auto run = [&](auto cotag, int64_t co) {
    constexpr int CO = decltype(cotag)::value;
    fwd_block<CO, NS>(segs, pbase, off + toff0, ctaps,
                      wi + co * ntaps + toff0 * CO, bias_eff, out, plane,
                      g.cout, n, co, acc_eff);
  };
  int64_t co = 0;
  for (; co + 8 <= g.cout; co += 8) run(std::integral_constant<int, 8>{}, co);
  for (; co + 4 <= g.cout; co += 4) run(std::integral_constant<int, 4>{}, co);
  for (; co + 2 <= g.cout; co += 2) run(std::integral_constant<int, 2>{}, co);
  for (; co < g.cout; ++co) run(std::integral_constant<int, 1>{}, co);
}

// Weights reordered tap-major within each co block of 8 (then 4/2/1 tails),
// so the broadcasts of one tap all hit one cache line.
void interleave_weights(const float* weight, int64_t cout, int64_t ntaps,
                        std::vector<float>& wi) {
  wi.resize(static_cast<size_t>(cout * ntaps));
  int64_t co = 0;
  auto block = [&](int64_t b) {
    float* dst = wi.data() + co * ntaps;
    for (int64_t t = 0; t < ntaps; ++t)
      for (int64_t j = 0; j < b; ++j)
        dst[t * b + j] = weight[(co + j) * ntaps + t];
    co += b;
  };
  while (co + 8 <= cout) block(8);
  while (co + 4 <= cout) block(4);
  while (co + 2 <= cout) block(2);
  while (co < cout) block(1);
}

void conv_fwd_avx_s1(const ConvGeom& g, const float* in, const float* weight,
                     const float* bias, float* out, bool accumulate) {
  const int64_t p = g.pad();
  const int64_t plane = g.h * g.w;
  const int64_t ntaps = g.cin * g.k * g.k;
  Scratch& sc = tls_scratch();
  PaddedInput& pad = sc.pad;
  std::vector<VecSegs>& segs = sc.segs;
  std::vector<int64_t>& off = sc.off;
  std::vector<float>& wi = sc.wi;
  interleave_weights(weight, g.cout, ntaps, wi);
  // Small planes leave most lanes idle per sample; stack the whole batch
  // vertically so vectors pack across samples, then scatter back to
  // sample-major order.
  if (plane <= 512 && g.n > 1) {
    pad.fill_stacked(in, g.n, g.cin, g.h, g.w, p);
    stacked_segments(g.n, g.h, g.w, pad.wp, g.h + p, segs);
    const int ns = pad_segments(segs);
    tap_offsets(g.cin, g.k, g.dilation, pad.hp, pad.wp, off);
    std::vector<float>& q = sc.stuffed;
    const int64_t splane = g.n * plane;
    q.resize(static_cast<size_t>(g.cout * splane));
    const float* pbase = pad.buf.data();
    const int64_t chan_bytes = pad.hp * pad.wp * 4;
    int64_t chunk = g.cin;
    if (g.cin * chan_bytes > (1 << 20))
      chunk = std::max<int64_t>(8, (768 << 10) / chan_bytes);
    for (int64_t ci0 = 0; ci0 < g.cin; ci0 += chunk) {
      const int64_t ci1 = std::min(g.cin, ci0 + chunk);
      switch (ns) {
        case 1:
          fwd_all_blocks<1>(g, segs, pbase, off.data(), ntaps, wi.data(),
                            bias, q.data(), splane, 0, false, ci0, ci1);
          break;
        case 2:
          fwd_all_blocks<2>(g, segs, pbase, off.data(), ntaps, wi.data(),
                            bias, q.data(), splane, 0, false, ci0, ci1);
          break;
        case 4:
          fwd_all_blocks<4>(g, segs, pbase, off.data(), ntaps, wi.data(),
                            bias, q.data(), splane, 0, false, ci0, ci1);
          break;
        default:
          fwd_all_blocks<0>(g, segs, pbase, off.data(), ntaps, wi.data(),
                            bias, q.data(), splane, 0, false, ci0, ci1);
          break;
      }
    }
    for (int64_t co = 0; co < g.cout; ++co)
      for (int64_t s = 0; s < g.n; ++s) {
        const float* src = q.data() + co * splane + s * plane;
        float* dst = out + (s * g.cout + co) * plane;
        if (accumulate)
          for (int64_t i = 0; i < plane; ++i) dst[i] += src[i];
        else
          std::memcpy(dst, src, sizeof(float) * plane);
      }
    return;
  }
  int ns = 0;
  for (int64_t n = 0; n < g.n; ++n) {
    pad.fill(in + n * g.cin * plane, g.cin, g.h, g.w, p);
    if (n == 0) {
      plane_segments(g.h, g.w, pad.wp, segs, /*allow_row_aligned=*/true);
      ns = pad_segments(segs);
      tap_offsets(g.cin, g.k, g.dilation, pad.hp, pad.wp, off);
    }
    const float* pbase = pad.buf.data();
    // chunk input channels so one chunk of padded rows fits in L2
    const int64_t chan_bytes = pad.hp * pad.wp * 4;
    int64_t chunk = g.cin;
    if (g.cin * chan_bytes > (1 << 20))
      chunk = std::max<int64_t>(8, (768 << 10) / chan_bytes);
    for (int64_t ci0 = 0; ci0 < g.cin; ci0 += chunk) {
      const int64_t ci1 = std::min(g.cin, ci0 + chunk);
      switch (ns) {
        case 1:
          fwd_all_blocks<1>(g, segs, pbase, off.data(), ntaps, wi.data(),
                            bias, out, plane, n, accumulate, ci0, ci1);
          break;
        case 2:
          fwd_all_blocks<2>(g, segs, pbase, off.data(), ntaps, wi.data(),
                            bias, out, plane, n, accumulate, ci0, ci1);
          break;
        case 4:
          fwd_all_blocks<4>(g, segs, pbase, off.data(), ntaps, wi.data(),
                            bias, out, plane, n, accumulate, ci0, ci1);
          break;
        default:
          fwd_all_blocks<0>(g, segs, pbase, off.data(), ntaps, wi.data(),
                            bias, out, plane, n, accumulate, ci0, ci1);
          break;
      }
    }
  }
}

// ---- stride-2 forward via 2x2 phase decimation ----
// A stride-2 tap grid touches one of four input sampling phases per tap;
// decimating the padded input into those quarter planes turns the stride-2
// convolution into a stride-1 one over contiguous rows, reusing the tiled
// stride-1 driver at full efficiency.

// dec[(ci*4+ph)*phsz + r*wq + c] = pad[ci][(2r+phy)*wp + 2c+phx]
void phase_decimate(const float* padbuf, int64_t cin, int64_t hp, int64_t wp,
                    int64_t hq, int64_t wq, float* dec) {
  const int64_t phsz = hq * wq;
  for (int64_t ci = 0; ci < cin; ++ci) {
    const float* src = padbuf + ci * hp * wp;
    float* dst = dec + ci * 4 * phsz;
    for (int ph = 0; ph < 4; ++ph) {
      const int64_t phy = ph >> 1, phx = ph & 1;
      for (int64_t r = 0; r < hq; ++r) {
        float* dr = dst + ph * phsz + r * wq;
        const int64_t sr = 2 * r + phy;
        if (sr >= hp) {
          std::memset(dr, 0, sizeof(float) * wq);
          continue;
        }
        const float* srow = src + sr * wp;
        int64_t c = 0;
        for (; 2 * c + phx < wp; ++c) dr[c] = srow[2 * c + phx];
        for (; c < wq; ++c) dr[c] = 0.0f;
      }
    }
  }
}

// tap offset of (dy,dx) inside the phase-decimated buffer of one channel
inline int64_t phase_tap(int64_t dyd, int64_t dxd, int64_t phsz, int64_t wq) {
  return ((dyd & 1) * 2 + (dxd & 1)) * phsz + (dyd >> 1) * wq + (dxd >> 1);
}

void conv_fwd_avx_s2(const ConvGeom& g, const float* in, const float* weight,
                     const float* bias, float* out, bool accumulate) {
  const int64_t p = g.pad();
  const int64_t oh = g.oh(), ow = g.ow(), oplane = oh * ow;
  const int64_t ntaps = g.cin * g.k * g.k;
  Scratch& sc = tls_scratch();
  PaddedInput& pad = sc.pad;
  std::vector<VecSegs>& segs = sc.segs;
  std::vector<int64_t>& off = sc.off;
  std::vector<float>& wi = sc.wi;
  std::vector<float>& dec = sc.dec;
  interleave_weights(weight, g.cout, ntaps, wi);
  int64_t hq = 0, wq = 0, phsz = 0, cisz = 0;
  int ns = 0;
  for (int64_t n = 0; n < g.n; ++n) {
    pad.fill(in + n * g.cin * g.h * g.w, g.cin, g.h, g.w, p);
    if (n == 0) {
      hq = (pad.hp + 1) / 2, wq = (pad.wp + 1) / 2;
      phsz = hq * wq, cisz = 4 * phsz;
      dec.resize(static_cast<size_t>(g.cin * cisz + 32));
      std::fill(dec.end() - 32, dec.end(), 0.0f);
      plane_segments(oh, ow, wq, segs, /*allow_row_aligned=*/true);
      ns = pad_segments(segs);
      off.resize(static_cast<size_t>(ntaps));
      size_t i = 0;
      for (int64_t ci = 0; ci < g.cin; ++ci)
        for (int64_t dy = 0; dy < g.k; ++dy)
          for (int64_t dx = 0; dx < g.k; ++dx)
            off[i++] = ci * cisz + phase_tap(dy * g.dilation, dx * g.dilation,
                                            phsz, wq);
    }
    phase_decimate(pad.buf.data(), g.cin, pad.hp, pad.wp, hq, wq, dec.data());
    const int64_t chan_bytes = cisz * 4;
    int64_t chunk = g.cin;
    if (g.cin * chan_bytes > (1 << 20))
      chunk = std::max<int64_t>(8, (768 << 10) / chan_bytes);
    for (int64_t ci0 = 0; ci0 < g.cin; ci0 += chunk) {
      const int64_t ci1 = std::min(g.cin, ci0 + chunk);
      switch (ns) {
        case 1:
          fwd_all_blocks<1>(g, segs, dec.data(), off.data(), ntaps, wi.data(),
                            bias, out, oplane, n, accumulate, ci0, ci1);
          break;
        case 2:
          fwd_all_blocks<2>(g, segs, dec.data(), off.data(), ntaps, wi.data(),
                            bias, out, oplane, n, accumulate, ci0, ci1);
          break;
        case 4:
          fwd_all_blocks<4>(g, segs, dec.data(), off.data(), ntaps, wi.data(),
                            bias, out, oplane, n, accumulate, ci0, ci1);
          break;
        default:
          fwd_all_blocks<0>(g, segs, dec.data(), off.data(), ntaps, wi.data(),
                            bias, out, oplane, n, accumulate, ci0, ci1);
          break;
      }
    }
  }
}

// ---- weight gradient, stride 1: tap panels ----
// For one input channel and a chunk of output-position vectors, every
// tap-shifted x vector is materialized once into an aligned panel; the hot
// loop then runs pure sequential loads + FMAs, and one panel is reused
// across every output channel. Segment merging only happens during the
// (amortized) panel build.

constexpr int kPanelVC = 32;  // position vectors per panel chunk

template <int NS>
__attribute__((noinline)) void bwd_panel_build(const VecSegs* vs, int nv,
                                               const float* pbase,
                                               const int64_t* toff, int64_t kk,
                                               float* panel) {
  for (int64_t t = 0; t < kk; ++t) {
    const float* b = pbase + toff[t];
    float* dst = panel + t * kPanelVC * 16;
    for (int v = 0; v < nv; ++v)
      _mm512_storeu_ps(dst + v * 16, merged_load<NS>(vs[v], b));
  }
}

// CB dout channels x TG panel taps; accumulators stay in registers for the
// whole chunk, so only CB*TG horizontal reductions happen per call
template <int CB, int TG>
__attribute__((noinline)) void bwd_panel_mk(const float* panel, int nv,
                                            const VecSegs* vs,
                                            const float* const* dc,
                                            float* const* dw) {
  __m512 acc[CB][TG];
  for (int c = 0; c < CB; ++c)
    for (int t = 0; t < TG; ++t) acc[c][t] = _mm512_setzero_ps();
#pragma GCC unroll 4
  for (int v = 0; v < nv; ++v) {
    __m512 dv[CB];
    for (int c = 0; c < CB; ++c)
      dv[c] = _mm512_maskz_loadu_ps(vs[v].store_mask, dc[c] + vs[v].out_off);
    for (int t = 0; t < TG; ++t) {
      const __m512 x = _mm512_loadu_ps(panel + (t * kPanelVC + v) * 16);
      for (int c = 0; c < CB; ++c)
        acc[c][t] = _mm512_fmadd_ps(dv[c], x, acc[c][t]);
    }
  }
  for (int c = 0; c < CB; ++c)
    for (int t = 0; t < TG; ++t)
      dw[c][t] += _mm512_reduce_add_ps(acc[c][t]);
}

// one co block of size CB (4, 2, or 1) against the current panel
template <int CB>
void bwd_panel_co_block(const ConvGeom& g, const float* panel, int nv,
                        const VecSegs* vs, const float* dout_n, int64_t dplane,
                        float* dweight, int64_t co, int64_t ci, int64_t kk) {
  const float* dc[CB];
  float* dwp[CB];
  for (int c = 0; c < CB; ++c) dc[c] = dout_n + (co + c) * dplane;
  auto taps = [&](int64_t t0, auto tg) {
    for (int c = 0; c < CB; ++c)
      dwp[c] = dweight + ((co + c) * g.cin + ci) * kk + t0;
    bwd_panel_mk<CB, decltype(tg)::value>(panel + t0 * kPanelVC * 16, nv, vs,
                                          dc, dwp);
  };
  int64_t t0 = 0;
  for (; t0 + 4 <= kk; t0 += 4) taps(t0, std::integral_constant<int, 4>{});
  switch (kk - t0) {
    case 1: taps(t0, std::integral_constant<int, 1>{}); break;
    case 2: taps(t0, std::integral_constant<int, 2>{}); break;
    case 3: taps(t0, std::integral_constant<int, 3>{}); break;
    default: break;
  }
}

// ---- weight gradient, stride 1, large kernels: kernel-row scheme ----
// Vector lanes run across the K taps of one kernel row instead of across
// output positions: per position, dout is broadcast and one contiguous x-row
// segment feeds each of the K row accumulators, which stay in registers for
// the whole plane (no horizontal reductions at all). Dilated taps become
// unit-stride by first decimating the padded input into DIL phase columns.

// CB dout channels per pass; acc[c][dy] lane dx accumulates dw[c][dy][dx].
// Accumulators persist across all nsamp sample planes (sample s of the
// input at xbase + s*xstride, of the gradient at dc[c] + s*dstride).
template <int CB, int K, int DIL>
__attribute__((noinline)) void bwd_w_rows_mk(const float* xbase,
                                             int64_t xstride, int64_t nsamp,
                                             int64_t rstride, int64_t h,
                                             int64_t w,
                                             const float* const* dc,
                                             int64_t dstride, float* accbuf) {
  __m512 acc[CB][K];
  for (int c = 0; c < CB; ++c)
    for (int t = 0; t < K; ++t) acc[c][t] = _mm512_setzero_ps();
  const int64_t dystep = rstride * DIL * DIL;
  for (int64_t s = 0; s < nsamp; ++s) {
    const float* xb = xbase + s * xstride;
    for (int64_t y = 0; y < h; ++y) {
      const float* dcy[CB];
      for (int c = 0; c < CB; ++c) dcy[c] = dc[c] + s * dstride + y * w;
      if constexpr (DIL == 1) {
        const float* by = xb + y * rstride;
        for (int64_t x = 0; x < w; ++x) {
          __m512 dv[CB];
          for (int c = 0; c < CB; ++c) dv[c] = _mm512_set1_ps(dcy[c][x]);
          for (int t = 0; t < K; ++t) {
            __m512 xv = _mm512_loadu_ps(by + x + t * dystep);
            asm("" : "+v"(xv));  // keep one load per tap (not one per channel)
            for (int c = 0; c < CB; ++c)
              acc[c][t] = _mm512_fmadd_ps(dv[c], xv, acc[c][t]);
          }
        }
      } else {
        for (int ph = 0; ph < DIL; ++ph) {
          const float* bp = xb + (y * DIL + ph) * rstride;
          for (int64_t x = ph, i = 0; x < w; x += DIL, ++i) {
            __m512 dv[CB];
            for (int c = 0; c < CB; ++c) dv[c] = _mm512_set1_ps(dcy[c][x]);
            for (int t = 0; t < K; ++t) {
              __m512 xv = _mm512_loadu_ps(bp + i + t * dystep);
              asm("" : "+v"(xv));
              for (int c = 0; c < CB; ++c)
                acc[c][t] = _mm512_fmadd_ps(dv[c], xv, acc[c][t]);
            }
          }
        }
      }
    }
  }
  for (int c = 0; c < CB; ++c)
    for (int t = 0; t < K; ++t)
      _mm512_storeu_ps(accbuf + (c * K + t) * 16, acc[c][t]);
}

// rows of the dilated-phase decimated copy for one padded channel plane
template <int DIL>
void rows_decimate(const float* pbase, int64_t hp, int64_t wp, int64_t wcap,
                   float* dec) {
  for (int64_t r = 0; r < hp; ++r)
    for (int ph = 0; ph < DIL; ++ph) {
      float* dr = dec + (r * DIL + ph) * wcap;
      const float* src = pbase + r * wp;
      int64_t i = 0;
      for (int64_t xs = ph; xs < wp; xs += DIL, ++i) dr[i] = src[xs];
      for (; i < wcap; ++i) dr[i] = 0.0f;
    }
}

// one input channel against every output channel, kernel-row scheme;
// pstride/dstride are the per-sample strides of the padded input channel
// and of the output gradient
template <int K, int DIL>
void bwd_w_rows_ci(const ConvGeom& g, const float* pbase, int64_t pstride,
                   int64_t nsamp, int64_t hp, int64_t wp,
                   const float* dout, float* dweight, int64_t ci,
                   float* dec) {
  constexpr int CBmax = 2;
  const int64_t plane = g.h * g.w, kk = int64_t{K} * K;
  const int64_t dstride = g.cout * plane;
  const float* xbase = pbase;
  int64_t rstride = wp, xstride = pstride;
  if constexpr (DIL > 1) {
    // phase-decimated copy: dec[(r*DIL+ph)*wcap + i] = pbase[r*wp + ph + i*DIL]
    const int64_t wcap = wp / DIL + 17;
    const int64_t decsz = hp * DIL * wcap;
    for (int64_t s = 0; s < nsamp; ++s)
      rows_decimate<DIL>(pbase + s * pstride, hp, wp, wcap, dec + s * decsz);
    xbase = dec;
    rstride = wcap;
    xstride = decsz;
  }
  alignas(64) float accbuf[CBmax * K * 16];
  const __mmask16 rowmask = static_cast<__mmask16>((1u << K) - 1u);
  auto run = [&](int64_t co, auto cbtag) {
    constexpr int CB = decltype(cbtag)::value;
    const float* dcp[CB];
    for (int c = 0; c < CB; ++c) dcp[c] = dout + (co + c) * plane;
    bwd_w_rows_mk<CB, K, DIL>(xbase, xstride, nsamp, rstride, g.h, g.w, dcp,
                              dstride, accbuf);
    for (int c = 0; c < CB; ++c)
      for (int t = 0; t < K; ++t) {
        float* dwr = dweight + ((co + c) * g.cin + ci) * kk + t * K;
        const __m512 prev = _mm512_maskz_loadu_ps(rowmask, dwr);
        const __m512 add = _mm512_loadu_ps(accbuf + (c * K + t) * 16);
        _mm512_mask_storeu_ps(dwr, rowmask, _mm512_add_ps(prev, add));
      }
  };
  int64_t co = 0;
  for (; co + CBmax <= g.cout; co += CBmax)
    run(co, std::integral_constant<int, CBmax>{});
  for (; co < g.cout; ++co) run(co, std::integral_constant<int, 1>{});
}

// dispatch helper: true if the (k, dilation) pair has a row-scheme kernel
using RowsCiFn = void (*)(const ConvGeom&, const float*, int64_t, int64_t,
                          int64_t, int64_t, const float*, float*, int64_t,
                          float*);

RowsCiFn rows_ci_fn(int64_t k, int64_t dilation) {
  switch (k * 10 + dilation) {
    case 71: return &bwd_w_rows_ci<7, 1>;
    case 72: return &bwd_w_rows_ci<7, 2>;
    case 73: return &bwd_w_rows_ci<7, 3>;
    case 91: return &bwd_w_rows_ci<9, 1>;
    case 92: return &bwd_w_rows_ci<9, 2>;
    case 93: return &bwd_w_rows_ci<9, 3>;
    case 111: return &bwd_w_rows_ci<11, 1>;
    case 112: return &bwd_w_rows_ci<11, 2>;
    case 113: return &bwd_w_rows_ci<11, 3>;
    default: return nullptr;
  }
}

// weight gradient of every (ci, co) pair: position chunks on the outside so
// each dout chunk stays cache-hot across all input channels
void bwd_w_all(const ConvGeom& g, const std::vector<VecSegs>& segs,
               const float* base, int64_t cisz, const int64_t* toff,
               int64_t kk, const float* dout_n, int64_t dplane, float* dweight,
               int ns, float* panel) {
  const int64_t nvec = static_cast<int64_t>(segs.size());
  for (int64_t v0 = 0; v0 < nvec; v0 += kPanelVC) {
    const int nv = static_cast<int>(std::min<int64_t>(kPanelVC, nvec - v0));
    const VecSegs* vs = segs.data() + v0;
    for (int64_t ci = 0; ci < g.cin; ++ci) {
      const float* pbase_ci = base + ci * cisz;
      switch (ns) {
        case 1: bwd_panel_build<1>(vs, nv, pbase_ci, toff, kk, panel); break;
        case 2: bwd_panel_build<2>(vs, nv, pbase_ci, toff, kk, panel); break;
        case 4: bwd_panel_build<4>(vs, nv, pbase_ci, toff, kk, panel); break;
        default: bwd_panel_build<0>(vs, nv, pbase_ci, toff, kk, panel); break;
      }
      int64_t co = 0;
      for (; co + 4 <= g.cout; co += 4)
        bwd_panel_co_block<4>(g, panel, nv, vs, dout_n, dplane, dweight, co,
                              ci, kk);
      for (; co + 2 <= g.cout; co += 2)
        bwd_panel_co_block<2>(g, panel, nv, vs, dout_n, dplane, dweight, co,
                              ci, kk);
      for (; co < g.cout; ++co)
        bwd_panel_co_block<1>(g, panel, nv, vs, dout_n, dplane, dweight, co,
                              ci, kk);
    }
  }
}

// Small planes have so few 16-lane vectors that the per-plane horizontal
// reductions dominate; below this size all samples are padded into one
// buffer and streamed as a single vector list, amortizing the reductions
// over the whole batch.
constexpr int64_t kBwdBatchPlane = 512;

void bwd_w_batch(const ConvGeom& g, const float* in, const float* dout,
                 float* dweight, float* dbias) {
  const int64_t p = g.pad(), kk = g.k * g.k;
  const int64_t plane = g.h * g.w;
  Scratch& sc = tls_scratch();
  PaddedInput& pad = sc.pad;
  pad.fill(in, g.n * g.cin, g.h, g.w, p);
  const int64_t sample_stride = g.cin * pad.hp * pad.wp;

  std::vector<VecSegs> base;
  plane_segments(g.h, g.w, pad.wp, base, /*allow_row_aligned=*/false);
  const int ns = pad_segments(base);
  std::vector<VecSegs>& segs = sc.segs;
  segs.resize(base.size() * static_cast<size_t>(g.n));
  size_t i = 0;
  for (int64_t n = 0; n < g.n; ++n)
    for (const VecSegs& b : base) {
      VecSegs& vs = segs[i++];
      vs = b;
      vs.out_off += n * g.cout * plane;
      for (int s = 0; s < vs.nseg; ++s) vs.seg[s].off += n * sample_stride;
    }

  std::vector<int64_t> toff(static_cast<size_t>(kk));
  for (int64_t dy = 0; dy < g.k; ++dy)
    for (int64_t dx = 0; dx < g.k; ++dx)
      toff[dy * g.k + dx] = dy * g.dilation * pad.wp + dx * g.dilation;

  if (dbias)
    for (int64_t n = 0; n < g.n; ++n)
      for (int64_t co = 0; co < g.cout; ++co) {
        const float* dout_co = dout + (n * g.cout + co) * plane;
        float s = 0.0f;
        for (int64_t i2 = 0; i2 < plane; ++i2) s += dout_co[i2];
        dbias[co] += s;
      }

  std::vector<float>& panel = sc.panel;
  panel.resize(static_cast<size_t>(kk) * kPanelVC * 16);
  bwd_w_all(g, segs, pad.buf.data(), pad.hp * pad.wp, toff.data(), kk, dout,
            plane, dweight, ns, panel.data());
}

// ---- weight gradient, stride 2: phase-decimated quarter planes ----
// Splitting the padded input into its 2x2 sampling phases turns every tap
// into a contiguous dot product against the (unstuffed) output gradient, so
// no arithmetic is spent on the stride lattice's zeros. All samples share
// one vector list, amortizing the horizontal reductions over the batch.
void conv_bwd_weight_avx_s2(const ConvGeom& g, const float* in,
                            const float* dout, float* dweight, float* dbias) {
  const int64_t p = g.pad(), kk = g.k * g.k;
  const int64_t oh = g.oh(), ow = g.ow(), oplane = oh * ow;
  Scratch& sc = tls_scratch();
  PaddedInput& pad = sc.pad;
  pad.fill(in, g.n * g.cin, g.h, g.w, p);
  const int64_t hq = (pad.hp + 1) / 2, wq = (pad.wp + 1) / 2;
  const int64_t phsz = hq * wq, cisz = 4 * phsz;

  std::vector<float>& dec = sc.dec;
  dec.resize(static_cast<size_t>(g.n * g.cin * cisz + 32));
  std::fill(dec.end() - 32, dec.end(), 0.0f);
  for (int64_t pl = 0; pl < g.n * g.cin; ++pl) {
    const float* src = pad.buf.data() + pl * pad.hp * pad.wp;
    float* dst = dec.data() + pl * cisz;
    for (int ph = 0; ph < 4; ++ph) {
      const int64_t phy = ph >> 1, phx = ph & 1;
      for (int64_t r = 0; r < hq; ++r) {
        float* dr = dst + ph * phsz + r * wq;
        const int64_t sr = 2 * r + phy;
        if (sr >= pad.hp) {
          std::memset(dr, 0, sizeof(float) * wq);
          continue;
        }
        const float* srow = src + sr * pad.wp;
        int64_t c = 0;
        for (; 2 * c + phx < pad.wp; ++c) dr[c] = srow[2 * c + phx];
        for (; c < wq; ++c) dr[c] = 0.0f;
      }
    }
  }

  std::vector<VecSegs> basev;
  plane_segments(oh, ow, wq, basev, /*allow_row_aligned=*/false);
  const int ns = pad_segments(basev);
  std::vector<VecSegs>& segs = sc.segs;
  segs.resize(basev.size() * static_cast<size_t>(g.n));
  size_t i = 0;
  for (int64_t n = 0; n < g.n; ++n)
    for (const VecSegs& b : basev) {
      VecSegs& vs = segs[i++];
      vs = b;
      vs.out_off += n * g.cout * oplane;
      for (int s = 0; s < vs.nseg; ++s) vs.seg[s].off += n * g.cin * cisz;
    }

  std::vector<int64_t> toff(static_cast<size_t>(kk));
  for (int64_t dy = 0; dy < g.k; ++dy)
    for (int64_t dx = 0; dx < g.k; ++dx) {
      const int64_t dyd = dy * g.dilation, dxd = dx * g.dilation;
      toff[dy * g.k + dx] =
          ((dyd & 1) * 2 + (dxd & 1)) * phsz + (dyd >> 1) * wq + (dxd >> 1);
    }

  if (dbias)
    for (int64_t n = 0; n < g.n; ++n)
      for (int64_t co = 0; co < g.cout; ++co) {
        const float* dout_co = dout + (n * g.cout + co) * oplane;
        float s = 0.0f;
        for (int64_t i2 = 0; i2 < oplane; ++i2) s += dout_co[i2];
        dbias[co] += s;
      }

  std::vector<float>& panel = sc.panel;
  panel.resize(static_cast<size_t>(kk) * kPanelVC * 16);
  bwd_w_all(g, segs, dec.data(), cisz, toff.data(), kk, dout, oplane,
            dweight, ns, panel.data());
}

void conv_bwd_weight_avx_s1(const ConvGeom& g, const float* in,
                            const float* dout, float* dweight, float* dbias) {
  const int64_t p = g.pad(), kk = g.k * g.k;
  const int64_t plane = g.h * g.w;
  const RowsCiFn rows = rows_ci_fn(g.k, g.dilation);
  if (rows) {
    Scratch& sc = tls_scratch();
    PaddedInput& pad = sc.pad;
    if (dbias)
      for (int64_t n = 0; n < g.n; ++n)
        for (int64_t co = 0; co < g.cout; ++co) {
          const float* dout_co = dout + (n * g.cout + co) * plane;
          float s = 0.0f;
          for (int64_t i = 0; i < plane; ++i) s += dout_co[i];
          dbias[co] += s;
        }
    if (plane <= kBwdBatchPlane) {
      // whole batch per accumulator pass: the tiny planes fit in cache, and
      // batching amortizes the per-plane setup and dw read-modify-write
      pad.fill(in, g.n * g.cin, g.h, g.w, p);
      sc.panel.resize(static_cast<size_t>(g.n * pad.hp * (pad.wp + 51) + 32));
      const int64_t pstride = g.cin * pad.hp * pad.wp;
      for (int64_t ci = 0; ci < g.cin; ++ci)
        rows(g, pad.buf.data() + ci * pad.hp * pad.wp, pstride, g.n, pad.hp,
             pad.wp, dout, dweight, ci, sc.panel.data());
      return;
    }
    for (int64_t n = 0; n < g.n; ++n) {
      pad.fill(in + n * g.cin * plane, g.cin, g.h, g.w, p);
      if (n == 0)
        sc.panel.resize(static_cast<size_t>(pad.hp * (pad.wp + 51) + 32));
      const float* dout_n = dout + n * g.cout * plane;
      for (int64_t ci = 0; ci < g.cin; ++ci)
        rows(g, pad.buf.data() + ci * pad.hp * pad.wp, 0, 1, pad.hp, pad.wp,
             dout_n, dweight, ci, sc.panel.data());
    }
    return;
  }
  if (plane <= kBwdBatchPlane) {
    bwd_w_batch(g, in, dout, dweight, dbias);
    return;
  }
  Scratch& sc = tls_scratch();
  PaddedInput& pad = sc.pad;
  std::vector<VecSegs>& segs = sc.segs;
  std::vector<int64_t> toff(static_cast<size_t>(kk));
  int ns = 0;
  for (int64_t n = 0; n < g.n; ++n) {
    pad.fill(in + n * g.cin * plane, g.cin, g.h, g.w, p);
    if (n == 0) {
      plane_segments(g.h, g.w, pad.wp, segs, /*allow_row_aligned=*/false);
      ns = pad_segments(segs);
      for (int64_t dy = 0; dy < g.k; ++dy)
        for (int64_t dx = 0; dx < g.k; ++dx)
          toff[dy * g.k + dx] = dy * g.dilation * pad.wp + dx * g.dilation;
    }
    if (dbias)
      for (int64_t co = 0; co < g.cout; ++co) {
        const float* dout_co = dout + (n * g.cout + co) * plane;
        float s = 0.0f;
        for (int64_t i = 0; i < plane; ++i) s += dout_co[i];
        dbias[co] += s;
      }
    const float* dout_n = dout + n * g.cout * plane;
    std::vector<float>& panel = sc.panel;
    panel.resize(static_cast<size_t>(kk) * kPanelVC * 16);
    bwd_w_all(g, segs, pad.buf.data(), pad.hp * pad.wp, toff.data(), kk,
              dout_n, plane, dweight, ns, panel.data());
  }
}

#endif  // __AVX512F__

}  // namespace

void conv_fwd_fast(const ConvGeom& g, const float* in, const float* weight,
                   const float* bias, float* out, bool accumulate) {
#ifdef __AVX512F__
  if (g.stride == 1) {
    conv_fwd_avx_s1(g, in, weight, bias, out, accumulate);
    return;
  }
  if (g.stride == 2) {
    conv_fwd_avx_s2(g, in, weight, bias, out, accumulate);
    return;
  }
#endif
  conv_fwd_ref(g, in, weight, bias, out, accumulate);
}

void conv_bwd_weight_fast(const ConvGeom& g, const float* in,
                          const float* dout, float* dweight, float* dbias) {
#ifdef __AVX512F__
  if (g.stride == 1) {
    conv_bwd_weight_avx_s1(g, in, dout, dweight, dbias);
    return;
  }
  if (g.stride == 2) {
    conv_bwd_weight_avx_s2(g, in, dout, dweight, dbias);
    return;
  }
  // stride > 1: spread dout onto the stride lattice and reduce to the
  // stride-1 kernel (the stuffed zeros contribute nothing)
  {
    const int64_t oh = g.oh(), ow = g.ow();
    auto stuffed = zero_stuff(dout, g.n, g.cout, oh, ow, g.stride, g.h, g.w);
    ConvGeom g1 = g;
    g1.stride = 1;
    if (dbias)
      for (int64_t n = 0; n < g.n; ++n)
        for (int64_t co = 0; co < g.cout; ++co) {
          float s = 0.0f;
          const float* d = dout + (n * g.cout + co) * oh * ow;
          for (int64_t i = 0; i < oh * ow; ++i) s += d[i];
          dbias[co] += s;
        }
    conv_bwd_weight_avx_s1(g1, in, stuffed.data(), dweight, nullptr);
    return;
  }
#endif
  conv_bwd_weight_ref(g, in, dout, dweight, dbias);
}


// ---- transposed convolution forward, stride 2 ----
// Each output phase (Y%2, X%2) only sees the weight taps whose parity lines
// up with the stride lattice, so it is a small dense convolution of the
// original (unstuffed) input. The four quarter outputs are computed with the
// stride-1 driver and interleaved, spending no arithmetic on lattice zeros.
void conv_tr_fwd_fast(int64_t n, int64_t cin, int64_t cout, int64_t h,
                      int64_t w, int64_t k, const float* in,
                      const float* weight, const float* bias, float* out) {
#ifdef __AVX512F__
  const int64_t p = (k - 1) / 2, pE = (p + 1) / 2;
  const int64_t plane = h * w, oh = 2 * h, ow = 2 * w;
  const auto wf = flip_swap_weight(weight, cin, cout, k);
  Scratch& sc = tls_scratch();
  PaddedInput& pad = sc.pad;
  std::vector<VecSegs>& segs = sc.segs;
  static thread_local std::vector<int64_t> off4[4];
  static thread_local std::vector<float> wi4[4], wsub, q;
  int64_t kk4[4], dy04[4], dx04[4], kx4[4];
  q.resize(static_cast<size_t>(cout * plane));
  const ConvGeom gq{1, cin, h, w, cout, k, 1, 1};
  int ns = 0;
  for (int64_t ni = 0; ni < n; ++ni) {
    pad.fill(in + ni * cin * plane, cin, h, w, pE);
    if (ni == 0) {
      plane_segments(h, w, pad.wp, segs, /*allow_row_aligned=*/true);
      ns = pad_segments(segs);
      const int64_t psz = pad.hp * pad.wp;
      for (int ph = 0; ph < 4; ++ph) {
        const int64_t py = ph >> 1, px = ph & 1;
        // taps with dy = dy0, dy0+2, ... reach input row y + d0y + jy
        const int64_t dy0 = (p + py) & 1, dx0 = (p + px) & 1;
        const int64_t ky = dy0 < k ? ((k - 1 - dy0) >> 1) + 1 : 0;
        const int64_t kx = dx0 < k ? ((k - 1 - dx0) >> 1) + 1 : 0;
        const int64_t d0y = (py - p + dy0) / 2, d0x = (px - p + dx0) / 2;
        const int64_t kk = ky * kx;
        dy04[ph] = dy0, dx04[ph] = dx0, kx4[ph] = kx, kk4[ph] = kk;
        std::vector<int64_t>& off = off4[ph];
        off.resize(static_cast<size_t>(cin * kk));
        size_t i = 0;
        for (int64_t ci = 0; ci < cin; ++ci)
          for (int64_t jy = 0; jy < ky; ++jy)
            for (int64_t jx = 0; jx < kx; ++jx)
              off[i++] = ci * psz + (d0y + jy + pE) * pad.wp + d0x + jx + pE;
        wsub.resize(static_cast<size_t>(cout * cin * kk));
        i = 0;
        for (int64_t co = 0; co < cout; ++co)
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t jy = 0; jy < ky; ++jy)
              for (int64_t jx = 0; jx < kx; ++jx)
                wsub[i++] = wf[((co * cin + ci) * k + dy0 + 2 * jy) * k +
                               dx0 + 2 * jx];
        interleave_weights(wsub.data(), cout, cin * kk, wi4[ph]);
      }
    }
    for (int ph = 0; ph < 4; ++ph) {
      const int64_t py = ph >> 1, px = ph & 1;
      const int64_t ntaps = cin * kk4[ph];
      const int64_t chan_bytes = pad.hp * pad.wp * 4;
      int64_t chunk = cin;
      if (cin * chan_bytes > (1 << 20))
        chunk = std::max<int64_t>(8, (768 << 10) / chan_bytes);
      for (int64_t ci0 = 0; ci0 < cin; ci0 += chunk) {
        const int64_t ci1 = std::min(cin, ci0 + chunk);
        switch (ns) {
          case 1:
            fwd_all_blocks<1>(gq, segs, pad.buf.data(), off4[ph].data(),
                              ntaps, wi4[ph].data(), bias, q.data(), plane, 0,
                              false, ci0, ci1);
            break;
          case 2:
            fwd_all_blocks<2>(gq, segs, pad.buf.data(), off4[ph].data(),
                              ntaps, wi4[ph].data(), bias, q.data(), plane, 0,
                              false, ci0, ci1);
            break;
          case 4:
            fwd_all_blocks<4>(gq, segs, pad.buf.data(), off4[ph].data(),
                              ntaps, wi4[ph].data(), bias, q.data(), plane, 0,
                              false, ci0, ci1);
            break;
          default:
            fwd_all_blocks<0>(gq, segs, pad.buf.data(), off4[ph].data(),
                              ntaps, wi4[ph].data(), bias, q.data(), plane, 0,
                              false, ci0, ci1);
            break;
        }
      }
      for (int64_t co = 0; co < cout; ++co)
        for (int64_t y = 0; y < h; ++y) {
          const float* qr = q.data() + (co * h + y) * w;
          float* orow =
              out + ((ni * cout + co) * oh + 2 * y + py) * ow + px;
          for (int64_t x = 0; x < w; ++x) orow[2 * x] = qr[x];
        }
    }
  }
#else
  const int64_t oh = 2 * h, ow = 2 * w;
  auto stuffed = zero_stuff(in, n, cin, h, w, 2, oh, ow);
  auto wf = flip_swap_weight(weight, cin, cout, k);
  ConvGeom gf{n, cin, oh, ow, cout, k, 1, 1};
  conv_fwd_fast(gf, stuffed.data(), wf.data(), bias, out, false);
#endif
}

}  // namespace aggfov::kern
