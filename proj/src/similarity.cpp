#include "nona/similarity.hpp"

#include <cmath>
#include <vector>

#include "nona/errors.hpp"

namespace nona {

std::string to_string(SimilarityKind kind) {
  switch (kind) {
    case SimilarityKind::NegL2: return "neg_l2";
    case SimilarityKind::NegL1: return "neg_l1";
    case SimilarityKind::Dot: return "dot";
    case SimilarityKind::Cosine: return "cosine";
  }
  return "unknown";
}

SimilarityKind parse_similarity(std::string_view name) {
  if (name == "neg_l2") return SimilarityKind::NegL2;
  if (name == "neg_l1") return SimilarityKind::NegL1;
  if (name == "dot") return SimilarityKind::Dot;
  if (name == "cosine") return SimilarityKind::Cosine;
  throw ConfigError("unknown similarity '" + std::string(name) + "' (expected neg_l2, neg_l1, dot or cosine)");
}

namespace {

void check_operands(const Tensor& Z, const Tensor& Z_N) {
  if (Z.rank() != 2 || Z_N.rank() != 2) throw DimensionError("similarity operands must be matrices");
  if (Z.cols() != Z_N.cols()) {
    throw DimensionError("embedding dimensions differ: " + shape_string(Z.shape()) + " vs " +
                         shape_string(Z_N.shape()));
  }
  if (Z.cols() == 0) throw DimensionError("embedding dimension must be at least 1");
}

std::vector<double> row_norms(const Tensor& Z) {
  std::vector<double> norms(Z.rows());
  for (std::size_t i = 0; i < Z.rows(); ++i) {
    double s = 0.0;
    for (double v : Z.row(i)) s += v * v;
    norms[i] = std::sqrt(s);
    if (norms[i] == 0.0) throw DomainError("cosine similarity of a zero-norm embedding");
  }
  return norms;
}

double sign(double x) { return (x > 0.0) - (x < 0.0); }

}  // namespace

Tensor pairwise_similarity(SimilarityKind kind, const Tensor& Z, const Tensor& Z_N) {
  check_operands(Z, Z_N);
  const std::size_t b = Z.rows(), n = Z_N.rows(), d = Z.cols();
  if (kind == SimilarityKind::Dot) return kernels::matmul_nt(Z, Z_N);

  Tensor out(Shape{b, n});
  if (kind == SimilarityKind::Cosine) {
    out = kernels::matmul_nt(Z, Z_N);
    const auto nz = row_norms(Z);
    const auto nn = row_norms(Z_N);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < n; ++j) out(i, j) /= nz[i] * nn[j];
    return out;
  }
  for (std::size_t i = 0; i < b; ++i) {
    const double* zi = Z.row(i).data();
    for (std::size_t j = 0; j < n; ++j) {
      const double* zj = Z_N.row(j).data();
      double acc = 0.0;
      if (kind == SimilarityKind::NegL2) {
        for (std::size_t k = 0; k < d; ++k) {
          const double delta = zi[k] - zj[k];
          acc += delta * delta;
        }
        out(i, j) = -std::sqrt(acc);
      } else {
        for (std::size_t k = 0; k < d; ++k) acc += std::abs(zi[k] - zj[k]);
        out(i, j) = -acc;
      }
    }
  }
  return out;
}

Var pairwise_similarity(SimilarityKind kind, Var Z, Var Z_N) {
  if (&Z.tape() != &Z_N.tape()) throw ContractError("operands recorded on different tapes");
  Tensor out = pairwise_similarity(kind, Z.value(), Z_N.value());
  return Z.tape().record(std::move(out), {Z, Z_N}, [kind, iz = Z.id(), in = Z_N.id()](Tape& t, const Tensor& g) {
    const Tensor& z = t.value(iz);
    const Tensor& zn = t.value(in);
    const std::size_t b = z.rows(), n = zn.rows(), d = z.cols();
    Tensor gz(z.shape());
    Tensor gn(zn.shape());

    switch (kind) {
      case SimilarityKind::Dot:
        gz = kernels::matmul(g, zn);
        gn = kernels::matmul_tn(g, z);
        break;
      case SimilarityKind::Cosine: {
        const auto nz = row_norms(z);
        const auto nn = row_norms(zn);
        for (std::size_t i = 0; i < b; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            const double gij = g(i, j);
            if (gij == 0.0) continue;
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) dot += z(i, k) * zn(j, k);
            const double inv = 1.0 / (nz[i] * nn[j]);
            const double s = dot * inv;
            for (std::size_t k = 0; k < d; ++k) {
              gz(i, k) += gij * (zn(j, k) * inv - s * z(i, k) / (nz[i] * nz[i]));
              gn(j, k) += gij * (z(i, k) * inv - s * zn(j, k) / (nn[j] * nn[j]));
            }
          }
        }
        break;
      }
      case SimilarityKind::NegL2:
      case SimilarityKind::NegL1: {
        for (std::size_t i = 0; i < b; ++i) {
          const double* zi = z.row(i).data();
          double* gzi = gz.row(i).data();
          for (std::size_t j = 0; j < n; ++j) {
            const double gij = g(i, j);
            if (gij == 0.0) continue;
            const double* zj = zn.row(j).data();
            double* gnj = gn.row(j).data();
            if (kind == SimilarityKind::NegL2) {
              double acc = 0.0;
              for (std::size_t k = 0; k < d; ++k) {
                const double delta = zi[k] - zj[k];
                acc += delta * delta;
              }
              const double c = gij / std::sqrt(acc + kNegL2GradSmoothing);
              for (std::size_t k = 0; k < d; ++k) {
                const double delta = zi[k] - zj[k];
                gzi[k] -= c * delta;
                gnj[k] += c * delta;
              }
            } else {
              for (std::size_t k = 0; k < d; ++k) {
                const double s = sign(zi[k] - zj[k]);
                gzi[k] -= gij * s;
                gnj[k] += gij * s;
              }
            }
          }
        }
        break;
      }
    }
    t.accumulate(iz, gz);
    t.accumulate(in, gn);
  });
}

}  // namespace nona
