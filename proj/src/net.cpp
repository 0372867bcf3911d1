#include "nlab/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "nlab/errors.hpp"

namespace nlab {

namespace {

void fill_uniform_glorot(Tensor& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& x : w.v) x = rng.uniform(-bound, bound);
}

}  // namespace

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers) n += l.w.numel() + l.b.numel();
  return n;
}

std::size_t Network::num_classes() const {
  for (auto it = layers.rbegin(); it != layers.rend(); ++it)
    if (it->kind == LayerKind::dense) return it->w.dim(0);
  throw ConfigError("network has no dense output layer");
}

bool Network::all_finite() const {
  for (const Layer& l : layers)
    if (!l.w.all_finite() || !l.b.all_finite()) return false;
  return true;
}

Network make_default_net(int num_classes, int in_channels, int height, int width,
                         std::uint64_t seed, int filters, int hidden) {
  if (num_classes < 2) throw ConfigError("need at least 2 classes");
  Rng rng = Rng::keyed({seed, rngkey::kInit});
  Network net;

  const std::size_t f = static_cast<std::size_t>(filters);
  const std::size_t c = static_cast<std::size_t>(in_channels);
  Layer conv{LayerKind::conv2d, Tensor::zeros({f, c, 3, 3}), Tensor::zeros({f})};
  fill_uniform_glorot(conv.w, c * 9, f * 9, rng);
  net.layers.push_back(std::move(conv));
  net.layers.push_back(Layer{LayerKind::relu, Tensor(), Tensor()});
  net.layers.push_back(Layer{LayerKind::flatten, Tensor(), Tensor()});

  const std::size_t flat = f * static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  const std::size_t h = static_cast<std::size_t>(hidden);
  Layer d1{LayerKind::dense, Tensor::zeros({h, flat}), Tensor::zeros({h})};
  fill_uniform_glorot(d1.w, flat, h, rng);
  net.layers.push_back(std::move(d1));
  net.layers.push_back(Layer{LayerKind::relu, Tensor(), Tensor()});

  const std::size_t out = static_cast<std::size_t>(num_classes);
  Layer d2{LayerKind::dense, Tensor::zeros({out, h}), Tensor::zeros({out})};
  fill_uniform_glorot(d2.w, h, out, rng);
  net.layers.push_back(std::move(d2));
  return net;
}

Network make_mlp(const std::vector<int>& dims, std::uint64_t seed, bool relu_hidden) {
  if (dims.size() < 2) throw ConfigError("mlp needs at least input and output dims");
  Rng rng = Rng::keyed({seed, rngkey::kInit});
  Network net;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::size_t in = static_cast<std::size_t>(dims[i]);
    const std::size_t out = static_cast<std::size_t>(dims[i + 1]);
    Layer d{LayerKind::dense, Tensor::zeros({out, in}), Tensor::zeros({out})};
    fill_uniform_glorot(d.w, in, out, rng);
    net.layers.push_back(std::move(d));
    if (relu_hidden && i + 2 < dims.size())
      net.layers.push_back(Layer{LayerKind::relu, Tensor(), Tensor()});
  }
  return net;
}

namespace {

Tensor conv2d_forward(const Layer& l, const Tensor& x) {
  if (x.rank() != 4) throw ConfigError("conv2d expects a (B,C,H,W) batch");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = l.w.dim(0), K = l.w.dim(2);
  if (l.w.dim(1) != C) throw ConfigError("conv2d channel mismatch");
  const int pad = static_cast<int>(K / 2);

  Tensor y = Tensor::zeros({B, F, H, W});
  const double* wp = l.w.v.data();
  for (std::size_t b = 0; b < B; ++b) {
    const double* xb = x.v.data() + b * C * H * W;
    double* yb = y.v.data() + b * F * H * W;
    for (std::size_t f = 0; f < F; ++f) {
      const double bias = l.b.v[f];
      double* yf = yb + f * H * W;
      for (std::size_t c = 0; c < C; ++c) {
        const double* xc = xb + c * H * W;
        const double* wf = wp + (f * C + c) * K * K;
        for (std::size_t oy = 0; oy < H; ++oy) {
          for (std::size_t ox = 0; ox < W; ++ox) {
            double acc = 0.0;
            for (std::size_t ky = 0; ky < K; ++ky) {
              const int iy = static_cast<int>(oy + ky) - pad;
              if (iy < 0 || iy >= static_cast<int>(H)) continue;
              for (std::size_t kx = 0; kx < K; ++kx) {
                const int ix = static_cast<int>(ox + kx) - pad;
                if (ix < 0 || ix >= static_cast<int>(W)) continue;
                acc += wf[ky * K + kx] * xc[iy * W + ix];
              }
            }
            yf[oy * W + ox] += acc;
          }
        }
      }
      if (C > 0) {
        for (std::size_t i = 0; i < H * W; ++i) yf[i] += bias;
      }
    }
  }
  return y;
}

void conv2d_backward(const Layer& l, const Tensor& x, const Tensor& dy, Tensor& dw, Tensor& db,
                     Tensor& dx) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = l.w.dim(0), K = l.w.dim(2);
  const int pad = static_cast<int>(K / 2);
  for (std::size_t b = 0; b < B; ++b) {
    const double* xb = x.v.data() + b * C * H * W;
    const double* dyb = dy.v.data() + b * F * H * W;
    double* dxb = dx.v.data() + b * C * H * W;
    for (std::size_t f = 0; f < F; ++f) {
      const double* dyf = dyb + f * H * W;
      double dbf = 0.0;
      for (std::size_t i = 0; i < H * W; ++i) dbf += dyf[i];
      db.v[f] += dbf;
      for (std::size_t c = 0; c < C; ++c) {
        const double* xc = xb + c * H * W;
        double* dxc = dxb + c * H * W;
        double* dwf = dw.v.data() + (f * C + c) * K * K;
        const double* wf = l.w.v.data() + (f * C + c) * K * K;
        for (std::size_t oy = 0; oy < H; ++oy) {
          for (std::size_t ox = 0; ox < W; ++ox) {
            const double g = dyf[oy * W + ox];
            if (g == 0.0) continue;
            for (std::size_t ky = 0; ky < K; ++ky) {
              const int iy = static_cast<int>(oy + ky) - pad;
              if (iy < 0 || iy >= static_cast<int>(H)) continue;
              for (std::size_t kx = 0; kx < K; ++kx) {
                const int ix = static_cast<int>(ox + kx) - pad;
                if (ix < 0 || ix >= static_cast<int>(W)) continue;
                dwf[ky * K + kx] += g * xc[iy * W + ix];
                dxc[iy * W + ix] += g * wf[ky * K + kx];
              }
            }
          }
        }
      }
    }
  }
}

Tensor dense_forward(const Layer& l, const Tensor& x) {
  if (x.rank() != 2) throw ConfigError("dense expects a (B,D) batch");
  const std::size_t B = x.dim(0), D = x.dim(1);
  const std::size_t O = l.w.dim(0), I = l.w.dim(1);
  if (D != I) throw ConfigError("dense input dim mismatch");
  Tensor y = Tensor::zeros({B, O});
  for (std::size_t b = 0; b < B; ++b) {
    const double* xb = x.v.data() + b * D;
    double* yb = y.v.data() + b * O;
    for (std::size_t o = 0; o < O; ++o) {
      const double* wrow = l.w.v.data() + o * I;
      double acc = l.b.v[o];
      for (std::size_t i = 0; i < I; ++i) acc += wrow[i] * xb[i];
      yb[o] = acc;
    }
  }
  return y;
}

void dense_backward(const Layer& l, const Tensor& x, const Tensor& dy, Tensor& dw, Tensor& db,
                    Tensor& dx) {
  const std::size_t B = x.dim(0), I = l.w.dim(1), O = l.w.dim(0);
  for (std::size_t b = 0; b < B; ++b) {
    const double* xb = x.v.data() + b * I;
    const double* dyb = dy.v.data() + b * O;
    double* dxb = dx.v.data() + b * I;
    for (std::size_t o = 0; o < O; ++o) {
      const double g = dyb[o];
      db.v[o] += g;
      if (g == 0.0) continue;
      double* dwrow = dw.v.data() + o * I;
      const double* wrow = l.w.v.data() + o * I;
      for (std::size_t i = 0; i < I; ++i) {
        dwrow[i] += g * xb[i];
        dxb[i] += g * wrow[i];
      }
    }
  }
}

}  // namespace

Activations forward_cached(const Network& net, const Tensor& batch) {
  Activations cache;
  cache.acts.reserve(net.layers.size() + 1);
  cache.acts.push_back(batch);
  for (const Layer& l : net.layers) {
    const Tensor& x = cache.acts.back();
    switch (l.kind) {
      case LayerKind::conv2d:
        cache.acts.push_back(conv2d_forward(l, x));
        break;
      case LayerKind::dense:
        cache.acts.push_back(dense_forward(l, x));
        break;
      case LayerKind::relu: {
        Tensor y = x;
        for (double& t : y.v) t = t > 0.0 ? t : 0.0;
        cache.acts.push_back(std::move(y));
        break;
      }
      case LayerKind::flatten: {
        if (x.rank() < 2) throw ConfigError("flatten expects a batch");
        std::size_t rest = 1;
        for (std::size_t i = 1; i < x.rank(); ++i) rest *= x.dim(i);
        Tensor y = x;
        y.shape = {x.dim(0), rest};
        cache.acts.push_back(std::move(y));
        break;
      }
    }
  }
  return cache;
}

Tensor forward(const Network& net, const Tensor& batch) {
  return forward_cached(net, batch).acts.back();
}

Gradients Gradients::zeros_like(const Network& net) {
  Gradients g;
  g.w.reserve(net.layers.size());
  g.b.reserve(net.layers.size());
  for (const Layer& l : net.layers) {
    g.w.push_back(l.w.v.empty() ? Tensor() : Tensor::zeros(l.w.shape));
    g.b.push_back(l.b.v.empty() ? Tensor() : Tensor::zeros(l.b.shape));
  }
  return g;
}

void Gradients::accumulate(const Gradients& other, double scale) {
  for (std::size_t i = 0; i < w.size(); ++i) {
    for (std::size_t j = 0; j < w[i].v.size(); ++j) w[i].v[j] += scale * other.w[i].v[j];
    for (std::size_t j = 0; j < b[i].v.size(); ++j) b[i].v[j] += scale * other.b[i].v[j];
  }
}

Gradients backward(const Network& net, const Activations& cache, const Tensor& dlogits) {
  Gradients grads = Gradients::zeros_like(net);
  Tensor delta = dlogits;
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const Layer& l = net.layers[li];
    const Tensor& x = cache.acts[li];
    switch (l.kind) {
      case LayerKind::dense: {
        Tensor dx = Tensor::zeros(x.shape);
        dense_backward(l, x, delta, grads.w[li], grads.b[li], dx);
        delta = std::move(dx);
        break;
      }
      case LayerKind::conv2d: {
        Tensor dx = Tensor::zeros(x.shape);
        conv2d_backward(l, x, delta, grads.w[li], grads.b[li], dx);
        delta = std::move(dx);
        break;
      }
      case LayerKind::relu: {
        for (std::size_t i = 0; i < delta.v.size(); ++i)
          if (x.v[i] <= 0.0) delta.v[i] = 0.0;
        break;
      }
      case LayerKind::flatten: {
        delta.shape = x.shape;
        break;
      }
    }
  }
  return grads;
}

OptimizerState make_optimizer(const Network& net, double momentum, double weight_decay,
                              double lr) {
  OptimizerState s;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  s.lr = lr;
  for (const Layer& l : net.layers) {
    s.vw.push_back(l.w.v.empty() ? Tensor() : Tensor::zeros(l.w.shape));
    s.vb.push_back(l.b.v.empty() ? Tensor() : Tensor::zeros(l.b.shape));
  }
  return s;
}

void sgd_step(Network& net, const Gradients& grads, OptimizerState& state) {
  if (grads.w.size() != net.layers.size())
    throw ConfigError("gradient/layer count mismatch");
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    Layer& l = net.layers[li];
    for (std::size_t j = 0; j < l.w.v.size(); ++j) {
      double& v = state.vw[li].v[j];
      v = state.momentum * v + grads.w[li].v[j] + state.weight_decay * l.w.v[j];
      l.w.v[j] -= state.lr * v;
    }
    for (std::size_t j = 0; j < l.b.v.size(); ++j) {
      double& v = state.vb[li].v[j];
      v = state.momentum * v + grads.b[li].v[j] + state.weight_decay * l.b.v[j];
      l.b.v[j] -= state.lr * v;
    }
  }
}

double lr_at(int epoch, const LrSchedule& schedule) {
  if (epoch < 0) throw ConfigError("epoch must be >= 0");
  return epoch < schedule.drop_epoch ? schedule.base : schedule.base / 10.0;
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ConfigError("softmax expects (B,C) logits");
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  Tensor p = Tensor::zeros({B, C});
  for (std::size_t b = 0; b < B; ++b) {
    const double* z = logits.v.data() + b * C;
    double m = z[0];
    for (std::size_t c = 1; c < C; ++c) m = std::max(m, z[c]);
    double sum = 0.0;
    double* pb = p.v.data() + b * C;
    for (std::size_t c = 0; c < C; ++c) {
      pb[c] = std::exp(z[c] - m);
      sum += pb[c];
    }
    for (std::size_t c = 0; c < C; ++c) pb[c] /= sum;
  }
  return p;
}

XentResult softmax_xent(const Tensor& logits, const std::vector<ProbVector>& targets) {
  if (!logits.all_finite()) throw NumericError("non-finite logits in cross-entropy");
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  if (targets.size() != B) throw ConfigError("target count mismatch");

  XentResult r;
  r.per_sample.resize(B);
  r.dlogits = Tensor::zeros({B, C});
  Tensor p = softmax_rows(logits);
  for (std::size_t b = 0; b < B; ++b) {
    if (targets[b].size() != C) throw ConfigError("target class count mismatch");
    const double* pb = p.v.data() + b * C;
    double* db = r.dlogits.v.data() + b * C;
    double loss = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double t = targets[b][c];
      loss -= t * std::log(std::max(pb[c], 1e-12));
      db[c] = (pb[c] - t) / static_cast<double>(B);
    }
    r.per_sample[b] = loss;
    r.loss += loss / static_cast<double>(B);
  }
  return r;
}

PenaltyResult confidence_penalty(const Tensor& logits) {
  if (!logits.all_finite()) throw NumericError("non-finite logits in confidence penalty");
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  PenaltyResult r;
  r.dlogits = Tensor::zeros({B, C});
  Tensor p = softmax_rows(logits);
  for (std::size_t b = 0; b < B; ++b) {
    const double* pb = p.v.data() + b * C;
    double* db = r.dlogits.v.data() + b * C;
    double neg_entropy = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double lp = std::log(std::max(pb[c], 1e-12));
      neg_entropy += pb[c] * lp;
    }
    // d/dz_c of sum_k p_k log p_k = p_c (log p_c - sum_k p_k log p_k)
    for (std::size_t c = 0; c < C; ++c) {
      const double lp = std::log(std::max(pb[c], 1e-12));
      db[c] = pb[c] * (lp - neg_entropy) / static_cast<double>(B);
    }
    r.value += neg_entropy / static_cast<double>(B);
  }
  return r;
}

namespace {

// Visit every parameter of the net as a mutable double*.
template <class F>
void for_each_param(Network& net, F&& fn) {
  for (Layer& l : net.layers) {
    for (double& x : l.w.v) fn(x);
    for (double& x : l.b.v) fn(x);
  }
}

std::vector<double> flatten_grads(const Gradients& g) {
  std::vector<double> out;
  for (std::size_t i = 0; i < g.w.size(); ++i) {
    out.insert(out.end(), g.w[i].v.begin(), g.w[i].v.end());
    out.insert(out.end(), g.b[i].v.begin(), g.b[i].v.end());
  }
  return out;
}

}  // namespace

double grad_check_loss(Network& net, const std::function<double(const Network&)>& loss,
                       const Gradients& analytic, double eps) {
  const std::vector<double> a = flatten_grads(analytic);
  std::vector<double*> params;
  for_each_param(net, [&](double& x) { params.push_back(&x); });
  if (params.size() != a.size()) throw ConfigError("gradient size mismatch in grad check");

  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = *params[i];
    *params[i] = orig + eps;
    const double fp = loss(net);
    *params[i] = orig - eps;
    const double fm = loss(net);
    *params[i] = orig;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double denom = std::max({std::fabs(a[i]), std::fabs(numeric), 1e-2});
    worst = std::max(worst, std::fabs(a[i] - numeric) / denom);
  }
  return worst;
}

double grad_check(Network& net, const Tensor& batch, const std::vector<ProbVector>& targets,
                  double eps, double penalty_weight) {
  Activations cache = forward_cached(net, batch);
  XentResult xe = softmax_xent(cache.logits(), targets);
  Tensor dlogits = xe.dlogits;
  if (penalty_weight != 0.0) {
    PenaltyResult pen = confidence_penalty(cache.logits());
    for (std::size_t i = 0; i < dlogits.v.size(); ++i)
      dlogits.v[i] += penalty_weight * pen.dlogits.v[i];
  }
  Gradients analytic = backward(net, cache, dlogits);

  auto loss = [&](const Network& n) {
    Tensor logits = forward(n, batch);
    double total = softmax_xent(logits, targets).loss;
    if (penalty_weight != 0.0) total += penalty_weight * confidence_penalty(logits).value;
    return total;
  };
  return grad_check_loss(net, loss, analytic, eps);
}

namespace {

void write_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& f) {
  unsigned char b[4];
  if (!f.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated checkpoint");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f64(std::ofstream& f, double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  f.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(std::ifstream& f) {
  unsigned char b[8];
  if (!f.read(reinterpret_cast<char*>(b), 8)) throw FormatError("truncated checkpoint");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double x;
  std::memcpy(&x, &bits, 8);
  return x;
}

void write_tensor(std::ofstream& f, const Tensor& t) {
  // Parameterless layers serialize as an explicit zero-length tensor.
  if (t.v.empty()) {
    write_u32(f, 1);
    write_u32(f, 0);
    return;
  }
  write_u32(f, static_cast<std::uint32_t>(t.shape.size()));
  for (std::size_t d : t.shape) write_u32(f, static_cast<std::uint32_t>(d));
  for (double x : t.v) write_f64(f, x);
}

Tensor read_tensor(std::ifstream& f) {
  const std::uint32_t rank = read_u32(f);
  if (rank > 8) throw FormatError("implausible tensor rank in checkpoint");
  std::vector<std::size_t> shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i) shape[i] = read_u32(f);
  const std::size_t n = Tensor::numel_of(shape);
  if (n == 0) return Tensor();
  if (n > (1u << 28)) throw FormatError("implausible tensor size in checkpoint");
  std::vector<double> vals(n);
  for (std::size_t i = 0; i < n; ++i) vals[i] = read_f64(f);
  return Tensor(std::move(shape), std::move(vals));
}

constexpr char kMagic[4] = {'N', 'L', 'A', 'B'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const Network& net, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(kMagic, 4);
  write_u32(f, kVersion);
  write_u32(f, static_cast<std::uint32_t>(net.layers.size()));
  for (const Layer& l : net.layers) {
    write_u32(f, static_cast<std::uint32_t>(l.kind));
    write_tensor(f, l.w);
    write_tensor(f, l.b);
  }
  if (!f) throw IoError("failed writing checkpoint: " + path);
}

Network load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  if (!f.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("bad checkpoint magic: " + path);
  const std::uint32_t version = read_u32(f);
  if (version != kVersion) throw FormatError("unsupported checkpoint version");
  const std::uint32_t count = read_u32(f);
  Network net;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t kind = read_u32(f);
    if (kind > 3) throw FormatError("unknown layer kind in checkpoint");
    Layer l;
    l.kind = static_cast<LayerKind>(kind);
    l.w = read_tensor(f);
    l.b = read_tensor(f);
    net.layers.push_back(std::move(l));
  }
  return net;
}

}  // namespace nlab
