#include "cvlnm/decoder.hpp"

namespace cvlnm {

LstmCell::LstmCell(std::size_t in_dim, std::size_t hid_dim, Rng& rng)
    : input_gate(hid_dim, in_dim + hid_dim, rng),
      forget_gate(hid_dim, in_dim + hid_dim, rng),
      output_gate(hid_dim, in_dim + hid_dim, rng),
      cell_gate(hid_dim, in_dim + hid_dim, rng),
      input_dim(in_dim),
      hidden_dim(hid_dim) {}

LstmCell::State LstmCell::initial_state() const {
  return State{Tensor::zeros({hidden_dim}), Tensor::zeros({hidden_dim})};
}

LstmCell::State LstmCell::step(const Tensor& input, const State& prev) const {
  if (input.size() != input_dim)
    throw ShapeError("lstm step: input size " + std::to_string(input.size()) +
                     ", expected " + std::to_string(input_dim));
  Tensor xh = concat({input, prev.h});
  Tensor i = sigmoid(input_gate.forward(xh));
  Tensor f = sigmoid(forget_gate.forward(xh));
  Tensor o = sigmoid(output_gate.forward(xh));
  Tensor g = tanh_t(cell_gate.forward(xh));
  Tensor c = add(mul(f, prev.c), mul(i, g));
  Tensor h = mul(o, tanh_t(c));
  return State{h, c};
}

void LstmCell::collect(const std::string& prefix, NamedParams& out) const {
  input_gate.collect(prefix + ".i", out);
  forget_gate.collect(prefix + ".f", out);
  output_gate.collect(prefix + ".o", out);
  cell_gate.collect(prefix + ".g", out);
}

}  // namespace cvlnm
