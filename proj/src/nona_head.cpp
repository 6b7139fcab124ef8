#include "nona/nona_head.hpp"

#include <limits>
#include <numeric>

#include "nona/errors.hpp"

namespace nona {

Var mask_self(Var scores, SelfIndex self_index) {
  const Tensor& s = scores.value();
  if (self_index.empty()) return scores;
  if (s.rank() != 2 || self_index.size() != s.rows()) throw DimensionError("self mask does not match score rows");
  Tensor out = s;
  std::vector<std::ptrdiff_t> self(self_index.begin(), self_index.end());
  for (std::size_t i = 0; i < self.size(); ++i) {
    if (self[i] == kNoSelf) continue;
    if (self[i] < 0 || static_cast<std::size_t>(self[i]) >= s.cols()) throw ContractError("self index out of range");
    out(i, static_cast<std::size_t>(self[i])) = -std::numeric_limits<double>::infinity();
  }
  return scores.tape().record(std::move(out), {scores}, [is = scores.id(), self = std::move(self)](Tape& t, const Tensor& g) {
    Tensor* gs = t.grad_buffer(is);
    if (!gs) return;
    const std::size_t cols = g.cols();
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        if (static_cast<std::ptrdiff_t>(j) != self[i]) (*gs)(i, j) += g(i, j);
      }
    }
  });
}

NonaHead::NonaHead(SimilarityKind similarity, SoftStepConfig softstep, std::size_t embedding_dim)
    : similarity_(similarity), softstep_(softstep, embedding_dim) {}

NonaHead::Output NonaHead::attend(Var Z, Var Z_N, Var y_N, SelfIndex self_index) const {
  const Tensor& labels = y_N.value();
  if (labels.rank() != 1 || labels.size() != Z_N.value().rows()) {
    throw ContractError("neighbor labels must be a vector with one entry per neighbor");
  }
  const Var sim = pairwise_similarity(similarity_, Z, Z_N);
  SoftStep::Result mask{sim, {}, {}, {}};
  if (softstep_.config().family != SoftStepFamily::None) {
    const Var sim_norm = minmax_normalize_rows(sim, self_index);
    mask = softstep_.apply(Z, sim, sim_norm, self_index);
  }
  const Var attention = rowwise_softmax(mask_self(mask.scores, self_index));
  return Output{matmul(attention, y_N), attention, mask};
}

NonaHead::Output NonaHead::forward_train(Var Z, Var y) const {
  const std::size_t b = Z.value().rows();
  if (b < 2) throw ContractError("NONA training batch needs at least 2 points, got " + std::to_string(b));
  if (y.value().size() != b) throw ContractError("label count does not match batch size");
  std::vector<std::ptrdiff_t> self(b);
  std::iota(self.begin(), self.end(), std::ptrdiff_t{0});
  return attend(Z, Z, y, self);
}

NonaHead::Output NonaHead::forward_infer(Var Z) const {
  const NeighborBank& bank = neighbor_bank();
  Tape& tape = Z.tape();
  return attend(Z, tape.constant(bank.embeddings), tape.constant(bank.labels), {});
}

Tensor NonaHead::predict(const Tensor& Z) const {
  Tape tape(false);
  return forward_infer(tape.constant(Z)).prediction.value();
}

void NonaHead::set_neighbor_bank(Tensor embeddings, Tensor labels) {
  if (embeddings.rank() != 2 || embeddings.rows() == 0) throw NotFittedError("neighbor bank is empty");
  if (labels.rank() != 1 || labels.size() != embeddings.rows()) {
    throw ContractError("neighbor bank has " + std::to_string(embeddings.rows()) + " embeddings but " +
                        std::to_string(labels.size()) + " labels");
  }
  bank_ = NeighborBank{std::move(embeddings), std::move(labels)};
}

const NeighborBank& NonaHead::neighbor_bank() const {
  if (!bank_) throw NotFittedError("NONA head has no neighbor bank");
  return *bank_;
}

}  // namespace nona
