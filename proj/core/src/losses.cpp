#include "lisa/losses.hpp"

#include <algorithm>
#include <cmath>

#include "lisa/errors.hpp"

namespace lisa {

namespace {

constexpr double kArccosGuard = 1e-7;

double huber(double e, double beta) {
  const double a = std::abs(e);
  return a < beta ? 0.5 * e * e / beta : a - 0.5 * beta;
}

double huber_grad(double e, double beta) {
  if (std::abs(e) < beta) return e / beta;
  return e > 0.0 ? 1.0 : -1.0;
}

}  // namespace

void LossWeights::validate() const {
  if (!(lambda_sep >= 0.0) || !(lambda_ang >= 0.0)) {
    throw InvalidArgument("loss weights must be non-negative");
  }
  if (!(smooth_l1_beta > 0.0)) throw InvalidArgument("smooth_l1_beta must be positive");
}

double smooth_l1(GazeAngles truth, GazeAngles pred, double beta) {
  return smooth_l1_with_grad(truth, pred, beta).value;
}

SmoothL1Grad smooth_l1_with_grad(GazeAngles truth, GazeAngles pred, double beta) {
  const double ey = pred.yaw - truth.yaw;
  const double ep = pred.pitch - truth.pitch;
  return {0.5 * (huber(ey, beta) + huber(ep, beta)), 0.5 * huber_grad(ey, beta),
          0.5 * huber_grad(ep, beta)};
}

double angular_loss(GazeVector3 v, GazeVector3 v_hat) { return angular_error_deg(v, v_hat); }

AngularLossGrad angular_loss_with_grad(GazeAngles truth, GazeAngles pred) {
  const GazeVector3 v = angles_to_vector(truth);
  const GazeVector3 p = angles_to_vector(pred);
  const double c = v.dot(p);
  AngularLossGrad g;
  g.value = std::acos(std::clamp(c, -1.0, 1.0)) * kRadToDeg;

  const double cg = std::clamp(c, -1.0 + kArccosGuard, 1.0 - kArccosGuard);
  const double dacos = -kRadToDeg / std::sqrt(1.0 - cg * cg);

  // d p / d yaw and d p / d pitch for p = (-cp sy, -sp, -cp cy).
  const double sy = std::sin(pred.yaw), cy = std::cos(pred.yaw);
  const double sp = std::sin(pred.pitch), cp = std::cos(pred.pitch);
  const GazeVector3 dp_dyaw{-cp * cy, 0.0, cp * sy};
  const GazeVector3 dp_dpitch{sp * sy, -cp, sp * cy};
  g.d_yaw = dacos * v.dot(dp_dyaw);
  g.d_pitch = dacos * v.dot(dp_dpitch);
  return g;
}

LossReport total_loss(GazeAngles truth, GazeAngles pred, std::span<const double> embedding,
                      const AnchorSet* anchors, const LossWeights& w) {
  w.validate();
  LossReport r;
  r.l1 = smooth_l1(truth, pred, w.smooth_l1_beta);
  r.ang = angular_loss_with_grad(truth, pred).value;
  if (anchors != nullptr && w.lambda_sep > 0.0) {
    r.sep = separation_loss(embedding, *anchors).loss;
  }
  r.total = r.l1 + w.lambda_ang * r.ang + w.lambda_sep * r.sep;
  return r;
}

BatchLoss batch_loss(std::span<const GazeAngles> truths, const Tensor& pred_angles,
                     const Tensor& embeddings, const AnchorSet* anchors, const LossWeights& w) {
  w.validate();
  const int n = static_cast<int>(truths.size());
  if (n == 0) throw InvalidArgument("batch loss: empty batch");
  if (pred_angles.rank() != 2 || pred_angles.dim(0) != n || pred_angles.dim(1) != 2) {
    throw ShapeError("batch loss: predictions " + pred_angles.shape_str() + " for " +
                     std::to_string(n) + " labels");
  }
  const bool use_sep = anchors != nullptr && w.lambda_sep > 0.0;
  BatchLoss out;
  out.d_angles = Tensor({n, 2});
  if (use_sep) {
    if (embeddings.rank() != 2 || embeddings.dim(0) != n) {
      throw ShapeError("batch loss: embeddings " + embeddings.shape_str() + " for batch of " +
                       std::to_string(n));
    }
    out.d_embedding = Tensor::zeros_like(embeddings);
  }
  const double inv_n = 1.0 / n;
  for (int i = 0; i < n; ++i) {
    const GazeAngles pred{pred_angles.at(i, 0), pred_angles.at(i, 1)};
    const SmoothL1Grad l1 = smooth_l1_with_grad(truths[i], pred, w.smooth_l1_beta);
    const AngularLossGrad ang = angular_loss_with_grad(truths[i], pred);
    out.report.l1 += l1.value * inv_n;
    out.report.ang += ang.value * inv_n;
    out.d_angles.at(i, 0) = (l1.d_yaw + w.lambda_ang * ang.d_yaw) * inv_n;
    out.d_angles.at(i, 1) = (l1.d_pitch + w.lambda_ang * ang.d_pitch) * inv_n;
    if (use_sep) {
      const int d = embeddings.dim(1);
      const std::span<const double> e(embeddings.data() + static_cast<std::size_t>(i) * d, d);
      const SeparationResult s = separation_loss(e, *anchors);
      if (s.degenerate) ++out.degenerate_embeddings;
      out.report.sep += s.loss * inv_n;
      for (int j = 0; j < d; ++j) out.d_embedding.at(i, j) = w.lambda_sep * s.grad[j] * inv_n;
    }
  }
  out.report.total = out.report.l1 + w.lambda_ang * out.report.ang + w.lambda_sep * out.report.sep;
  return out;
}

}  // namespace lisa
