#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nlab/rng.hpp"
#include "nlab/tensor.hpp"

namespace nlab {

// Minimal feedforward trainer: dense and small conv layers with analytic
// gradients, SGD with momentum and coupled weight decay, and a step
// learning-rate schedule. Everything is double precision and single threaded
// per training step, so runs are bit-reproducible.

enum class LayerKind : std::uint32_t { dense = 0, conv2d = 1, relu = 2, flatten = 3 };

struct Layer {
  LayerKind kind;
  // dense: w (out, in), b (out).
  // conv2d: w (filters, in_channels, k, k), b (filters); stride 1, zero
  // padding k/2 so spatial dims are preserved.
  // relu/flatten carry no parameters.
  Tensor w;
  Tensor b;
};

struct Network {
  std::vector<Layer> layers;

  std::size_t param_count() const;
  std::size_t num_classes() const;  // rows of the last dense layer
  bool all_finite() const;
};

// conv(filters,3x3) -> relu -> flatten -> dense(hidden) -> relu -> dense(C).
// Weights are uniform in +-sqrt(6/(fan_in+fan_out)), biases zero.
Network make_default_net(int num_classes, int in_channels, int height, int width,
                         std::uint64_t seed, int filters = 8, int hidden = 64);

// Dense-only net, mostly for tests: dims = {in, h1, ..., C}, ReLU between.
Network make_mlp(const std::vector<int>& dims, std::uint64_t seed, bool relu_hidden = true);

// Layer-by-layer cache of a forward pass; acts[0] is the input batch and
// acts[i+1] the output of layer i.
struct Activations {
  std::vector<Tensor> acts;
  const Tensor& logits() const { return acts.back(); }
};

// Input batch: (B, C, H, W) when the first layer is conv/flatten, (B, D) for
// dense-first nets. Throws ConfigError on shape mismatch.
Activations forward_cached(const Network& net, const Tensor& batch);
Tensor forward(const Network& net, const Tensor& batch);

struct Gradients {
  std::vector<Tensor> w;  // aligned with net.layers (empty tensors for relu/flatten)
  std::vector<Tensor> b;

  static Gradients zeros_like(const Network& net);
  void accumulate(const Gradients& other, double scale = 1.0);
};

// Backprop of dL/dlogits through the cached pass.
Gradients backward(const Network& net, const Activations& cache, const Tensor& dlogits);

struct OptimizerState {
  std::vector<Tensor> vw;  // momentum buffers aligned with layers
  std::vector<Tensor> vb;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double lr = 0.02;
};

OptimizerState make_optimizer(const Network& net, double momentum = 0.9,
                              double weight_decay = 0.0005, double lr = 0.02);

// v <- mu*v + g + wd*theta; theta <- theta - lr*v (weight decay coupled into
// the gradient, classic SGD).
void sgd_step(Network& net, const Gradients& grads, OptimizerState& state);

struct LrSchedule {
  double base = 0.02;
  int drop_epoch = 40;  // lr/10 at and after this epoch
};

double lr_at(int epoch, const LrSchedule& schedule);

// Mean cross-entropy with soft targets. Per-sample losses and dL/dlogits come
// back together; softmax is log-sum-exp stabilized and probabilities are
// floored at 1e-12 before the log.
struct XentResult {
  double loss = 0.0;
  std::vector<double> per_sample;
  Tensor dlogits;
};

XentResult softmax_xent(const Tensor& logits, const std::vector<ProbVector>& targets);

// Row-wise softmax of a (B, C) logits tensor.
Tensor softmax_rows(const Tensor& logits);

// Negative entropy of softmax(logits), averaged over the batch. Lives in
// [-ln C, 0]; adding it to the loss penalizes confident predictions.
struct PenaltyResult {
  double value = 0.0;
  Tensor dlogits;
};

PenaltyResult confidence_penalty(const Tensor& logits);

// Central-difference gradient check for an arbitrary scalar loss of the
// parameters. Returns max_i |analytic_i - numeric_i| / max(|a|, |n|, floor)
// with floor = 1e-2, which encodes "1e-4 relative with a 1e-6 absolute floor"
// when compared against 1e-4.
double grad_check_loss(Network& net, const std::function<double(const Network&)>& loss,
                       const Gradients& analytic, double eps);

// Convenience form: cross-entropy (plus optional confidence penalty weight)
// of the net on a fixed batch.
double grad_check(Network& net, const Tensor& batch, const std::vector<ProbVector>& targets,
                  double eps, double penalty_weight = 0.0);

// Flat binary checkpoint: magic "NLAB", version u32, layer count u32, then
// per layer a kind tag and both parameter tensors (u32 rank, u32 dims,
// little-endian f64 values).
void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);

}  // namespace nlab
