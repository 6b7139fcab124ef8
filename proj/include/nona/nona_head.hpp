#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "nona/autodiff.hpp"
#include "nona/similarity.hpp"
#include "nona/softstep.hpp"

namespace nona {

// Embeddings and labels of the labeled set a trained head attends to.
struct NeighborBank {
  Tensor embeddings;  // N x d
  Tensor labels;      // N
};

// Sets scores[i][self_index[i]] to -inf; those entries get zero gradient.
Var mask_self(Var scores, SelfIndex self_index);

// Nearness-of-neighbors attention regression head:
//   y_hat = softmax(sim(Z, Z_N) + ln SoftStep(norm sim) + M) y_N
// where M is -inf on each query's own entry while training.
class NonaHead {
 public:
  NonaHead() = default;
  NonaHead(SimilarityKind similarity, SoftStepConfig softstep, std::size_t embedding_dim);

  struct Output {
    Var prediction;  // b
    Var attention;   // b x N, rows are probability vectors
    SoftStep::Result mask;
  };

  // General form; self_index may be empty.
  Output attend(Var Z, Var Z_N, Var y_N, SelfIndex self_index) const;
  // Training batch: the batch is its own neighbor set with the diagonal
  // masked. Needs at least two rows.
  Output forward_train(Var Z, Var y) const;
  // Attends to the stored neighbor bank; throws NotFittedError without one.
  Output forward_infer(Var Z) const;
  Tensor predict(const Tensor& Z) const;

  void set_neighbor_bank(Tensor embeddings, Tensor labels);
  void clear_neighbor_bank() { bank_.reset(); }
  bool has_neighbor_bank() const { return bank_.has_value(); }
  const NeighborBank& neighbor_bank() const;

  SimilarityKind similarity() const { return similarity_; }
  const SoftStep& softstep() const { return softstep_; }
  SoftStep& softstep() { return softstep_; }
  std::vector<Parameter*> parameters() { return softstep_.parameters(); }

 private:
  SimilarityKind similarity_ = SimilarityKind::NegL2;
  SoftStep softstep_;
  std::optional<NeighborBank> bank_;
};

}  // namespace nona
