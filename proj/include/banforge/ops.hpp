#pragma once

#include <utility>
#include <vector>

#include "banforge/graph.hpp"

namespace banforge::ops {

// Differentiable primitives. Every op validates shapes (ArgumentError) and
// checks its output for non-finite values (NumericError). Gradients follow
// the conventions fixed for this library: ReLU subgradient at 0 is 0, and
// the only broadcast is the bias add.

Var matmul(Var a, Var b);                       // [m,k] x [k,n] -> [m,n]
Var add(Var a, Var b);                          // same shape
Var add_bias(Var x, Var bias);                  // [m,n] + [n]
Var add_channel_bias(Var x, Var bias);          // [b,C,H,W] + [C]
Var mul(Var a, Var b);                          // elementwise, same shape
Var mul_const(Var a, Tensor factor);            // elementwise by a constant tensor
Var scale(Var a, double factor);
Var relu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
Var log_softmax_rows(Var logits, double temperature = 1.0);  // [b,n], stable
Var sum_all(Var x);                             // -> scalar
Var reshape(Var x, std::vector<std::size_t> shape);
Var slice_cols(Var x, std::size_t start, std::size_t len);   // [m,n] -> [m,len]
Var concat_rows(const std::vector<Var>& parts);               // stack along dim 0
Var concat_channels(Var a, Var b);              // [b,C1,H,W] + [b,C2,H,W] -> [b,C1+C2,H,W]
Var conv2d(Var x, Var w, int stride, int pad);  // x [b,Cin,H,W], w [Cout,Cin,kh,kw]
Var avgpool2d(Var x, int k, int stride);
Var global_avgpool(Var x);                      // [b,C,H,W] -> [b,C]
Var embedding_lookup(Var table, const std::vector<int>& ids); // [V,E] -> [N,E]

// One LSTM cell step composed from the primitives above. Gate layout of the
// fused [*,4H] weights is (input, forget, cell, output).
struct LstmState {
    Var h;
    Var c;
};
LstmState lstm_step(Var x, LstmState state, Var w_ih, Var w_hh, Var bias);

} // namespace banforge::ops
