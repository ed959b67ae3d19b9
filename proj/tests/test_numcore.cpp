// Copyright 2026 The epistyle Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "epistyle/checkpoint.hpp"
#include "epistyle/optim.hpp"

using namespace epistyle;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({r, c});
  for (Real& v : t.values()) v = static_cast<Real>(uniform01(rng) * 2 - 1);
  return t;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("epistyle_numcore_" + name);
}

}  // namespace

TEST_CASE("max_over_time picks per-channel maxima and routes gradient to them") {
  // Rows are time steps, columns channels: channel 0 sees {1, 3}, channel 1 {2, 0}.
  Tape tape;
  Var x = tape.input(Tensor::matrix(2, 2, {1, 2, 3, 0}));
  Var y = nn::max_over_time(x);
  CHECK(y.value() == Tensor::matrix(1, 2, {3, 2}));
  tape.backward(nn::sum(y));
  CHECK(tape.grad(x) == Tensor::matrix(2, 2, {0, 1, 1, 0}));
}

TEST_CASE("l2_normalize of a 3-4-5 vector") {
  Tape tape;
  Var y = nn::l2_normalize(tape.input(Tensor::matrix(1, 2, {3, 4})));
  CHECK(y.value()[0] == doctest::Approx(0.6));
  CHECK(y.value()[1] == doctest::Approx(0.8));
}

TEST_CASE("l2_normalize rejects a zero row") {
  Tape tape;
  CHECK_THROWS(nn::l2_normalize(tape.input(Tensor::matrix(1, 2, {0, 0}))));
}

TEST_CASE("dropout") {
  Tape tape;
  const Tensor x = random_matrix(4, 8, 1);
  Rng rng(3);
  SUBCASE("p = 0 is the identity in training") {
    CHECK(nn::dropout(tape.input(x), 0, Mode{true, &rng}).value() == x);
  }
  SUBCASE("eval mode is the identity") {
    CHECK(nn::dropout(tape.input(x), Real(0.5), Mode{}).value() == x);
  }
  SUBCASE("kept units are scaled by 1/(1-p)") {
    const Tensor y = nn::dropout(tape.input(x), Real(0.25), Mode{true, &rng}).value();
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (y[i] == 0) {
        ++dropped;
      } else {
        CHECK(y[i] == doctest::Approx(x[i] / 0.75));
      }
    }
    CHECK(dropped > 0);
    CHECK(dropped < x.size());
  }
}

TEST_CASE("softmax rows sum to one") {
  Tape tape;
  const Tensor s = nn::softmax(tape.input(random_matrix(6, 9, 2))).value();
  for (std::size_t r = 0; r < s.rows(); ++r) {
    double total = 0;
    for (Real v : s.row(r)) total += v;
    CHECK(std::abs(total - 1) < 1e-6);
  }
}

TEST_CASE("layer_norm output is standardized per row") {
  Tape tape;
  Tensor x = random_matrix(5, 64, 3);
  for (Real& v : x.values()) v = v * 7 + 2;
  Parameter gamma("g", Tensor({1, 64}, Real(1)));
  Parameter beta("b", Tensor({1, 64}, Real(0)));
  const Tensor y =
      nn::layer_norm(tape.input(x), tape.param(gamma), tape.param(beta)).value();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double mean = 0, var = 0;
    for (Real v : y.row(r)) mean += v;
    mean /= 64;
    for (Real v : y.row(r)) var += (v - mean) * (v - mean);
    var /= 64;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1) < 1e-4);
  }
}

TEST_CASE("attention over one position reduces to value then output projection") {
  const std::size_t d = 8;
  Tape tape;
  std::vector<Parameter> p;
  for (int i = 0; i < 4; ++i) {
    p.emplace_back("w" + std::to_string(i), random_matrix(d, d, 10 + i));
    p.emplace_back("b" + std::to_string(i), random_matrix(1, d, 20 + i));
  }
  const AttentionWeights w{tape.param(p[0]), tape.param(p[1]), tape.param(p[2]), tape.param(p[3]),
                           tape.param(p[4]), tape.param(p[5]), tape.param(p[6]), tape.param(p[7])};
  Var x = tape.input(random_matrix(1, d, 4));
  const Tensor attn = nn::multihead_attention(x, w, 2).value();
  const Tensor direct = nn::linear(nn::linear(x, w.wv, w.bv), w.wo, w.bo).value();
  for (std::size_t i = 0; i < d; ++i) CHECK(attn[i] == doctest::Approx(direct[i]).epsilon(1e-5));
}

TEST_CASE("shape errors name both shapes") {
  Tape tape;
  Var a = tape.input(Tensor({2, 3}));
  Var b = tape.input(Tensor({2, 3}));
  try {
    nn::matmul(a, b);
    FAIL("expected a shape error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
  }
}

TEST_CASE("Adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Parameter p("p", random_matrix(3, 3, 5));
    const Tensor before = p.value;
    p.grad = Tensor({3, 3});
    AdamState adam;
    Parameter* ps[] = {&p};
    adam.step(ps, 1e-3);
    CHECK(p.value == before);
  }
  SUBCASE("first step with unit gradient moves by lr") {
    Parameter p("p", Tensor::scalar(0));
    p.grad = Tensor::scalar(1);
    AdamState adam;
    Parameter* ps[] = {&p};
    adam.step(ps, 1e-3);
    // m_hat = 1, v_hat = 1: delta = -lr / (1 + eps).
    CHECK(p.value[0] == doctest::Approx(-1e-3 / (1 + 1e-8)).epsilon(1e-6));
  }
  SUBCASE("identical runs are bitwise identical") {
    auto run = [] {
      Parameter p("p", random_matrix(4, 4, 6));
      AdamState adam;
      Parameter* ps[] = {&p};
      for (int s = 0; s < 10; ++s) {
        p.grad = random_matrix(4, 4, 100 + s);
        adam.step(ps, 1e-2);
      }
      return p.value;
    };
    CHECK(run() == run());
  }
  SUBCASE("non-finite gradient names the parameter") {
    Parameter p("encoder/w", Tensor::scalar(0));
    p.grad = Tensor::scalar(std::numeric_limits<Real>::quiet_NaN());
    AdamState adam;
    Parameter* ps[] = {&p};
    try {
      adam.step(ps, 1e-3);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("encoder/w") != std::string::npos);
    }
  }
}

TEST_CASE("plateau scheduler halves lr after patience non-improving epochs") {
  PlateauScheduler s(1e-3, 0.5, 5);
  CHECK_FALSE(s.step(1.0));
  for (int i = 0; i < 4; ++i) CHECK_FALSE(s.step(1.0));
  CHECK(s.step(1.0));
  CHECK(s.lr() == doctest::Approx(5e-4));
  CHECK_FALSE(s.step(0.5));
  CHECK(s.lr() == doctest::Approx(5e-4));
}

TEST_CASE("gradient clipping bounds the global norm") {
  Parameter a("a", Tensor({1, 2}));
  Parameter b("b", Tensor({1, 1}));
  a.grad = Tensor::matrix(1, 2, {3, 0});
  b.grad = Tensor::matrix(1, 1, {4});
  Parameter* ps[] = {&a, &b};
  CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad[0] == doctest::Approx(0.6));
  CHECK(b.grad[0] == doctest::Approx(0.8));
}

TEST_CASE("checkpoint format and round trip") {
  Parameter a("layer/w", random_matrix(2, 3, 7));
  Parameter b("layer/b", Tensor::matrix(1, 1, {1.5f}));
  const Parameter* ps[] = {&a, &b};
  const auto path = temp_path("ckpt");
  save_checkpoint(path, ps);

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() > 5);
  CHECK(bytes.substr(0, 5) == "EPST1");
  // The final 4 bytes are 1.5f in little-endian order.
  const unsigned char tail[4] = {0x00, 0x00, 0xC0, 0x3F};
  CHECK(std::equal(tail, tail + 4, reinterpret_cast<const unsigned char*>(bytes.data()) +
                                       bytes.size() - 4));

  const auto stored = load_checkpoint(path);
  CHECK(stored.at("layer/w") == a.value);
  Parameter a2("layer/w", Tensor({2, 3}));
  Parameter b2("layer/b", Tensor({1, 1}));
  Parameter* restore[] = {&a2, &b2};
  restore_parameters(stored, restore);
  CHECK(a2.value == a.value);
  CHECK(b2.value == b.value);

  Parameter wrong("layer/w", Tensor({3, 2}));
  Parameter* bad[] = {&wrong};
  CHECK_THROWS(restore_parameters(stored, bad));
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint rejects a foreign file") {
  const auto path = temp_path("bad");
  std::ofstream(path) << "NOPE";
  CHECK_THROWS(load_checkpoint(path));
  std::filesystem::remove(path);
}
