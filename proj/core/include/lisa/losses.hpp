#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "lisa/geometry.hpp"
#include "lisa/sdm.hpp"
#include "lisa/tensor.hpp"

// L_total = L_L1 + lambda_ang * L_ang + lambda_sep * L_sep.
// L_L1 is a smooth-L1 on (yaw, pitch) in radians, averaged over the two
// components; L_ang is the 3D angular error in degrees.

namespace lisa {

struct LossWeights {
  double lambda_sep = 0.1;
  double lambda_ang = 1.0;
  double smooth_l1_beta = 1.0;

  void validate() const;
};

struct LossReport {
  double total = 0.0;
  double l1 = 0.0;
  double ang = 0.0;
  double sep = 0.0;

  static std::string csv_header() { return "total,l1,ang,sep"; }
};

/// Quadratic 0.5 e^2 / beta below beta, |e| - beta / 2 above; mean of yaw and pitch.
double smooth_l1(GazeAngles truth, GazeAngles pred, double beta);

struct SmoothL1Grad {
  double value = 0.0;
  double d_yaw = 0.0;
  double d_pitch = 0.0;
};
SmoothL1Grad smooth_l1_with_grad(GazeAngles truth, GazeAngles pred, double beta);

/// Angular error in degrees; same value as angular_error_deg.
double angular_loss(GazeVector3 v, GazeVector3 v_hat);

struct AngularLossGrad {
  double value = 0.0;  ///< degrees
  double d_yaw = 0.0;
  double d_pitch = 0.0;
};

/// Angular loss between truth and angles_to_vector(pred), with its gradient
/// w.r.t. the predicted angles. The value uses the exact [-1, 1] clamp; the
/// derivative of arccos is evaluated with its argument clamped to
/// [-1 + 1e-7, 1 - 1e-7] so it stays finite for (anti)parallel vectors.
AngularLossGrad angular_loss_with_grad(GazeAngles truth, GazeAngles pred);

/// Single-sample composite objective. Pass anchors = nullptr (or
/// lambda_sep = 0) to skip the separation term without reading the anchors.
LossReport total_loss(GazeAngles truth, GazeAngles pred, std::span<const double> embedding,
                      const AnchorSet* anchors, const LossWeights& w);

struct BatchLoss {
  LossReport report;   ///< batch means
  Tensor d_angles;     ///< [N, 2]
  Tensor d_embedding;  ///< [N, D], empty when the separation term is off
  std::size_t degenerate_embeddings = 0;
};

/// Mean over the batch of every term; gradients are of the batch mean.
/// `embeddings` may be empty when the separation term is off.
BatchLoss batch_loss(std::span<const GazeAngles> truths, const Tensor& pred_angles,
                     const Tensor& embeddings, const AnchorSet* anchors, const LossWeights& w);

}  // namespace lisa
