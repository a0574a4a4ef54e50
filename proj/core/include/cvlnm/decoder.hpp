#pragma once

#include <vector>

#include "cvlnm/attention.hpp"
#include "cvlnm/tensor.hpp"

namespace cvlnm {

/// Plain LSTM cell. Gates: i, f, o = sigmoid, g = tanh,
/// c' = f⊙c + i⊙g, h' = o⊙tanh(c').
struct LstmCell {
  FcLayer input_gate;   // each: hidden <- input + hidden
  FcLayer forget_gate;
  FcLayer output_gate;
  FcLayer cell_gate;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;

  LstmCell() = default;
  LstmCell(std::size_t input_dim, std::size_t hidden_dim, Rng& rng);

  struct State {
    Tensor h;
    Tensor c;
  };
  State initial_state() const;  // zeros, not learned
  State step(const Tensor& input, const State& prev) const;
  void collect(const std::string& prefix, NamedParams& out) const;
};

/// Everything carried between decode steps for one sequence.
struct DecoderState {
  LstmCell::State lstm1;
  LstmCell::State lstm2;
  std::size_t t = 0;
  int last_token = 0;
};

/// A partial or finished beam-search candidate.
struct Hypothesis {
  std::vector<int> tokens;  // excludes <bos>, includes <eos> when finished
  Scalar log_prob = 0.0;
  bool finished = false;
};

}  // namespace cvlnm
