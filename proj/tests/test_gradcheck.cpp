#include <cstdint>
#include <functional>
#include <string>

#include "doctest.h"
#include "helpers.hpp"
#include "vilsum/model.hpp"

using namespace vilsum;

namespace {

enum class Which { gen, sel, reo, total };

double run_loss(const testutil::ToyFixture& toy, Which which, Tape& tape) {
  EncoderOutput enc = toy.model->encode(tape, toy.images, toy.text_ids);
  Var loss;
  switch (which) {
    case Which::gen:
      loss = toy.model->generation_loss(tape, enc, toy.summary_ids);
      break;
    case Which::sel:
      loss = toy.model->select_loss(tape, enc, toy.selection);
      break;
    case Which::reo:
      loss = toy.model->reorder_loss(tape, enc, toy.reorder);
      break;
    case Which::total: {
      TaskFlags all;
      all.sel = all.reo = true;
      loss = toy.model
                 ->total_loss(tape, enc, toy.summary_ids, toy.reorder, toy.selection, all)
                 .total;
      break;
    }
  }
  return static_cast<double>(tape.val(loss)[0]);
}

testutil::FdReport check_loss(std::uint32_t seed, Which which, Mode mode = Mode::joint) {
  auto toy = testutil::make_toy(seed, 12, 2, mode);
  toy.model->params().drop_grads();
  {
    Tape tape;
    EncoderOutput enc = toy.model->encode(tape, toy.images, toy.text_ids);
    Var loss;
    switch (which) {
      case Which::gen:
        loss = toy.model->generation_loss(tape, enc, toy.summary_ids);
        break;
      case Which::sel:
        loss = toy.model->select_loss(tape, enc, toy.selection);
        break;
      case Which::reo:
        loss = toy.model->reorder_loss(tape, enc, toy.reorder);
        break;
      case Which::total: {
        TaskFlags all;
        all.sel = all.reo = true;
        loss = toy.model
                   ->total_loss(tape, enc, toy.summary_ids, toy.reorder, toy.selection, all)
                   .total;
        break;
      }
    }
    tape.backward(loss);
  }
  auto loss_fn = [&toy, which]() {
    Tape tape;
    return run_loss(toy, which, tape);
  };
  return testutil::fd_check(toy.model->params(), loss_fn, 11);
}

void expect_clean(const testutil::FdReport& rep) {
  CAPTURE(rep.checked);
  CAPTURE(rep.max_abs);
  CAPTURE(rep.max_rel_big);
  CHECK(rep.ok());
}

}  // namespace

TEST_SUITE("gradcheck") {

TEST_CASE("generation loss gradients match finite differences across seeds") {
  for (std::uint32_t seed : {201u, 202u, 203u, 204u, 205u}) {
    CAPTURE(seed);
    expect_clean(check_loss(seed, Which::gen));
  }
}

TEST_CASE("selection loss gradients match finite differences across seeds") {
  for (std::uint32_t seed : {211u, 212u, 213u, 214u, 215u}) {
    CAPTURE(seed);
    expect_clean(check_loss(seed, Which::sel));
  }
}

TEST_CASE("reorder loss gradients match finite differences across seeds") {
  for (std::uint32_t seed : {221u, 222u, 223u, 224u, 225u}) {
    CAPTURE(seed);
    expect_clean(check_loss(seed, Which::reo));
  }
}

TEST_CASE("combined loss gradients match finite differences across seeds") {
  for (std::uint32_t seed : {231u, 232u, 233u, 234u, 235u}) {
    CAPTURE(seed);
    expect_clean(check_loss(seed, Which::total));
  }
}

TEST_CASE("cross-mode gradients also match finite differences") {
  expect_clean(check_loss(241, Which::total, Mode::cross));
}

}  // TEST_SUITE
