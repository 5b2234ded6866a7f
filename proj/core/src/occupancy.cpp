#include <algorithm>
#include <cmath>
#include <limits>

#include "b2w/decomposer.hpp"
#include "b2w/error.hpp"
#include "b2w/lp.hpp"
#include "b2w/parallel.hpp"

namespace b2w {
namespace {

constexpr std::size_t kChunk = 1024;
constexpr double kOccupancyFloor = std::numeric_limits<double>::min();
const double kOccupancyCeil = std::nextafter(1.0, 0.0);

double clamp_open(double p) { return std::clamp(p, kOccupancyFloor, kOccupancyCeil); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::vector<Faces> faces_of(std::span<const ConvexPrimitive> primitives) {
  std::vector<Faces> shapes;
  shapes.reserve(primitives.size());
  for (const ConvexPrimitive& p : primitives) shapes.push_back(p.halfspaces());
  return shapes;
}

std::size_t parameter_count(std::span<const Faces> shapes) {
  std::size_t n = 0;
  for (const Faces& f : shapes) n += 4 * f.size();
  return n;
}

struct ChunkSums {
  double mse = 0.0;
  double overlap = 0.0;
  std::vector<double> grad;  // flat [nx, ny, nz, d] per face
};

}  // namespace

double smooth_distance(std::span<const Halfspace> faces, const Vec3& x, double sharpness) {
  double m = -std::numeric_limits<double>::infinity();
  for (const Halfspace& h : faces) m = std::max(m, sharpness * (h.normal.dot(x) - h.offset));
  double sum = 0.0;
  for (const Halfspace& h : faces) sum += std::exp(sharpness * (h.normal.dot(x) - h.offset) - m);
  return (m + std::log(sum)) / sharpness;
}

double smooth_occupancy(std::span<const Halfspace> faces, const Vec3& x, double sharpness, double gain) {
  return clamp_open(sigmoid(-gain * smooth_distance(faces, x, sharpness)));
}

double smooth_occupancy(const ConvexPrimitive& p, const Vec3& x, double sharpness, double gain) {
  return smooth_occupancy(p.halfspaces(), x, sharpness, gain);
}

double union_occupancy(std::span<const Faces> shapes, const Vec3& x, double sharpness, double gain) {
  if (shapes.empty()) throw Error("decomposer", Errc::invalid_argument, "union occupancy needs at least one convex");
  double outside = 1.0;
  for (const Faces& f : shapes) outside *= 1.0 - smooth_occupancy(f, x, sharpness, gain);
  return clamp_open(1.0 - outside);
}

double union_occupancy(std::span<const ConvexPrimitive> primitives, const Vec3& x, double sharpness, double gain) {
  const std::vector<Faces> shapes = faces_of(primitives);
  return union_occupancy(shapes, x, sharpness, gain);
}

VolumeEstimate estimate_volume(std::span<const Halfspace> faces) {
  VolumeEstimate out;
  out.gradient.assign(faces.size(), Halfspace{Vec3::Zero(), 0.0});
  if (faces.size() < 4) return out;
  const auto m = static_cast<Eigen::Index>(faces.size());
  Eigen::MatrixXd A(m, 3);
  Eigen::VectorXd b(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    A.row(i) = faces[static_cast<std::size_t>(i)].normal.transpose();
    b(i) = faces[static_cast<std::size_t>(i)].offset;
  }
  // For each axis: length = max x_a - min x_a = maximize(e_a) + maximize(-e_a).
  std::array<double, 3> length{};
  std::array<lp::Result, 6> sol;
  for (int axis = 0; axis < 3; ++axis) {
    for (int s = 0; s < 2; ++s) {
      Eigen::VectorXd c = Eigen::VectorXd::Zero(3);
      c(axis) = s == 0 ? 1.0 : -1.0;
      sol[static_cast<std::size_t>(2 * axis + s)] = lp::maximize(c, A, b);
      if (sol[static_cast<std::size_t>(2 * axis + s)].status != lp::Status::optimal) return out;
    }
    length[static_cast<std::size_t>(axis)] = sol[static_cast<std::size_t>(2 * axis)].value + sol[static_cast<std::size_t>(2 * axis + 1)].value;
  }
  out.valid = true;
  out.volume = std::max(0.0, length[0]) * std::max(0.0, length[1]) * std::max(0.0, length[2]);
  for (int axis = 0; axis < 3; ++axis) {
    double others = 1.0;
    for (int o = 0; o < 3; ++o) {
      if (o != axis) others *= length[static_cast<std::size_t>(o)];
    }
    // d(value)/d b_i = y_i ; d(value)/d A_ij = -y_i x_j.
    for (int s = 0; s < 2; ++s) {
      const lp::Result& r = sol[static_cast<std::size_t>(2 * axis + s)];
      for (Eigen::Index i = 0; i < m; ++i) {
        const double y = r.dual(i);
        if (y == 0.0) continue;
        Halfspace& g = out.gradient[static_cast<std::size_t>(i)];
        g.offset += others * y;
        g.normal -= others * y * Vec3(r.x(0), r.x(1), r.x(2));
      }
    }
  }
  return out;
}

LossEval fit_loss(std::span<const Faces> shapes, std::span<const LabeledSample> samples, const FitConfig& cfg,
                  bool with_gradient) {
  if (samples.empty()) throw Error("decomposer", Errc::invalid_argument, "fit_loss needs at least one sample");
  const std::size_t K = shapes.size();
  const std::size_t P = parameter_count(shapes);
  const double N = static_cast<double>(samples.size());
  const double delta = cfg.sharpness;
  const double sigma = cfg.gain;

  std::vector<std::size_t> base(K, 0);
  for (std::size_t k = 1; k < K; ++k) base[k] = base[k - 1] + 4 * shapes[k - 1].size();

  const std::size_t n_chunks = (samples.size() + kChunk - 1) / kChunk;
  std::vector<ChunkSums> partial(n_chunks);

  parallel_for(n_chunks, cfg.threads, [&](std::size_t c) {
    ChunkSums& acc = partial[c];
    if (with_gradient) acc.grad.assign(P, 0.0);
    std::vector<double> phi(K), prefix(K + 1), suffix(K + 1);
    std::vector<std::vector<double>> weights(K);
    const std::size_t end = std::min(samples.size(), (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) {
      const Vec3& x = samples[i].position;
      for (std::size_t k = 0; k < K; ++k) {
        const Faces& f = shapes[k];
        std::vector<double>& w = weights[k];
        w.resize(f.size());
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t h = 0; h < f.size(); ++h) {
          w[h] = delta * (f[h].normal.dot(x) - f[h].offset);
          m = std::max(m, w[h]);
        }
        double sum = 0.0;
        for (double& e : w) {
          e = std::exp(e - m);
          sum += e;
        }
        for (double& e : w) e /= sum;
        const double dist = (m + std::log(sum)) / delta;
        phi[k] = clamp_open(sigmoid(-sigma * dist));
      }
      prefix[0] = 1.0;
      for (std::size_t k = 0; k < K; ++k) prefix[k + 1] = prefix[k] * (1.0 - phi[k]);
      suffix[K] = 1.0;
      for (std::size_t k = K; k-- > 0;) suffix[k] = suffix[k + 1] * (1.0 - phi[k]);
      const double u = K == 0 ? kOccupancyFloor : clamp_open(1.0 - prefix[K]);
      const double r = u - static_cast<double>(samples[i].label);
      acc.mse += r * r;
      double phi_sum = 0.0;
      double phi_sq = 0.0;
      for (double p : phi) {
        phi_sum += p;
        phi_sq += p * p;
      }
      acc.overlap += 0.5 * (phi_sum * phi_sum - phi_sq);
      if (!with_gradient) continue;
      for (std::size_t k = 0; k < K; ++k) {
        const double d_phi = 2.0 * r / N * prefix[k] * suffix[k + 1] + cfg.overlap_weight / N * (phi_sum - phi[k]);
        const double d_dist = d_phi * (-sigma * phi[k] * (1.0 - phi[k]));
        if (d_dist == 0.0) continue;
        const std::vector<double>& w = weights[k];
        double* g = acc.grad.data() + base[k];
        for (std::size_t h = 0; h < w.size(); ++h) {
          const double s = d_dist * w[h];
          g[4 * h + 0] += s * x.x();
          g[4 * h + 1] += s * x.y();
          g[4 * h + 2] += s * x.z();
          g[4 * h + 3] -= s;
        }
      }
    }
  });

  LossEval out;
  std::vector<double> grad(with_gradient ? P : 0, 0.0);
  for (const ChunkSums& acc : partial) {
    out.terms.mse += acc.mse;
    out.terms.overlap += acc.overlap;
    for (std::size_t p = 0; p < grad.size(); ++p) grad[p] += acc.grad[p];
  }
  out.terms.mse /= N;
  out.terms.overlap /= N;

  for (std::size_t k = 0; k < K; ++k) {
    const VolumeEstimate vol = estimate_volume(shapes[k]);
    out.terms.volume += vol.volume;
    if (!with_gradient || !vol.valid) continue;
    for (std::size_t h = 0; h < shapes[k].size(); ++h) {
      double* g = grad.data() + base[k] + 4 * h;
      for (int j = 0; j < 3; ++j) g[j] += cfg.volume_weight * vol.gradient[h].normal(j);
      g[3] += cfg.volume_weight * vol.gradient[h].offset;
    }
  }
  out.terms.total = out.terms.mse + cfg.overlap_weight * out.terms.overlap + cfg.volume_weight * out.terms.volume;

  if (with_gradient) {
    out.gradient.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
      out.gradient[k].resize(shapes[k].size());
      for (std::size_t h = 0; h < shapes[k].size(); ++h) {
        const double* g = grad.data() + base[k] + 4 * h;
        out.gradient[k][h] = Halfspace{Vec3(g[0], g[1], g[2]), g[3]};
      }
    }
  }
  return out;
}

LossEval fit_loss(std::span<const ConvexPrimitive> primitives, std::span<const LabeledSample> samples,
                  const FitConfig& cfg, bool with_gradient) {
  const std::vector<Faces> shapes = faces_of(primitives);
  return fit_loss(shapes, samples, cfg, with_gradient);
}

}  // namespace b2w
