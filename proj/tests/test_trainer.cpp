// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "relearn/data.hpp"
#include "relearn/errors.hpp"
#include "relearn/trainer.hpp"

using namespace relearn;

namespace {

Dataset teacher(std::size_t per_class = 20, std::uint64_t seed = 3) {
  SyntheticParams p;
  p.classes = 4;
  p.per_class = per_class;
  p.dim = 6;
  return gen_synthetic(SyntheticKind::kTeacherNetwork, p, seed);
}

LayeredModel small_mlp(std::uint64_t seed = 1) {
  const std::vector<std::size_t> hidden = {8, 8, 8};
  LayeredModel m = make_mlp(6, hidden, 4);
  Rng rng(seed);
  m.initialize(rng);
  return m;
}

ScheduleConfig small_config(Strategy s) {
  ScheduleConfig c;
  c.strategy = s;
  c.generations = 3;
  c.epochs = 4;
  c.ascent_epochs = 1;
  c.lr = 0.05;
  c.ascent_scale = 0.5;
  c.batch_size = 16;
  c.seed = 9;
  return c;
}

}  // namespace

TEST_CASE("phase arithmetic") {
  CHECK(phase_of(39, 160, 40) == Direction::kAscent);
  CHECK(phase_of(40, 160, 40) == Direction::kDescent);
  CHECK(phase_of(199, 160, 40) == Direction::kAscent);
  CHECK(phase_of(200, 160, 40) == Direction::kDescent);
  for (std::size_t e = 160; e < 200; ++e) CHECK(phase_of(e, 160, 40) == Direction::kAscent);
  CHECK(phase_of(0, 10, 0) == Direction::kDescent);
}

TEST_CASE("strategy names and schedule defaults") {
  for (const char* n : {"normal", "normal-long", "llf", "seal", "seal+freeze", "seal+reinit", "seal+reverse"}) {
    CHECK(std::string(strategy_name(parse_strategy(n))) == n);
  }
  CHECK_THROWS_AS(parse_strategy("sgd"), ConfigError);
  ScheduleConfig c;
  c.epochs = 160;
  CHECK(c.effective_ascent_epochs() == 40);
  c.strategy = Strategy::kLlf;
  CHECK(c.effective_ascent_epochs() == 0);
  CHECK(c.scheme() == MaskScheme::kLlf);
  c.strategy = Strategy::kNormal;
  CHECK(c.total_epochs() == 160);
}

TEST_CASE("schedule validation names the key") {
  ScheduleConfig c;
  c.ascent_epochs = 20;
  try {
    c.validate();
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "k");
  }
  c.ascent_epochs.reset();
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("record counts") {
  const Dataset d = teacher(2);
  ScheduleConfig normal = small_config(Strategy::kNormal);
  normal.epochs = 7;
  const auto r = run_schedule(normal, small_mlp(), d, nullptr);
  CHECK(r.records.size() == 7);
  CHECK(std::all_of(r.records.begin(), r.records.end(), [](const EpochRecord& e) { return e.phase == Direction::kDescent; }));

  ScheduleConfig seal = small_config(Strategy::kSeal);
  seal.generations = 10;
  seal.epochs = 160;
  seal.ascent_epochs = 40;
  seal.batch_size = 64;
  const std::vector<std::size_t> hidden = {2};
  LayeredModel tiny = make_mlp(6, hidden, 4);
  Rng rng(1);
  tiny.initialize(rng);
  const auto s = run_schedule(seal, tiny, d, nullptr);
  CHECK(s.records.size() == 1600);
  CHECK(std::count_if(s.records.begin(), s.records.end(), [](const EpochRecord& e) { return e.phase == Direction::kAscent; }) == 400);
  CHECK(s.records.back().generation == 9);
  CHECK(s.records.back().epoch_in_generation == 159);
}

TEST_CASE("epoch records carry the cosine rate and a test accuracy") {
  const Dataset d = teacher();
  const auto r = run_schedule(small_config(Strategy::kSeal), small_mlp(), d, &d);
  REQUIRE(r.records.size() == 12);
  CHECK(r.records[4].lr == 0.05);
  CHECK(r.records[6].lr == doctest::Approx(0.025));
  CHECK(r.records[4].phase == Direction::kAscent);
  CHECK(r.records[5].phase == Direction::kDescent);
  for (const auto& e : r.records) CHECK(e.test_accuracy == e.train_accuracy);
}

TEST_CASE("fit hypothesis never ascends") {
  const Dataset d = teacher();
  for (Strategy s : {Strategy::kSeal, Strategy::kSealFreeze, Strategy::kSealReverse, Strategy::kSealReinit}) {
    IterativeTrainer t(small_mlp(), small_config(s));
    std::vector<UpdateEvent> log;
    t.set_update_log(&log);
    t.run(d, nullptr);
    std::size_t ascents = 0;
    for (const auto& u : log) {
      if (u.direction == Direction::kAscent) {
        ++ascents;
        CHECK(t.mask()->in_forget(u.param));
        CHECK(phase_of(u.epoch, 4, 1) == Direction::kAscent);
      }
    }
    CHECK(ascents > 0);
  }
}

TEST_CASE("seal with no ascent epochs is normal-long") {
  const Dataset d = teacher();
  ScheduleConfig seal = small_config(Strategy::kSeal);
  seal.ascent_epochs = 0;
  const auto a = run_schedule(seal, small_mlp(), d, nullptr);
  const auto b = run_schedule(small_config(Strategy::kNormalLong), small_mlp(), d, nullptr);
  REQUIRE(a.final_params.size() == b.final_params.size());
  for (std::size_t i = 0; i < a.final_params.size(); ++i) CHECK(a.final_params[i] == b.final_params[i]);
}

TEST_CASE("llf redraws the forgetting hypothesis at each boundary") {
  const Dataset d = teacher();
  IterativeTrainer t(small_mlp(), small_config(Strategy::kLlf));
  int boundaries = 0;
  TrainerHooks hooks;
  hooks.on_boundary = [&](std::size_t, const LayeredModel& before, const LayeredModel& after) {
    ++boundaries;
    for (ParamId id = 0; id < after.param_count(); ++id) {
      const bool same = before.param(id).value == after.param(id).value;
      CHECK(same == !t.mask()->in_forget(id));
    }
  };
  t.set_hooks(hooks);
  const auto r = t.run(d, nullptr);
  CHECK(boundaries == 2);
  CHECK(std::none_of(r.records.begin(), r.records.end(), [](const EpochRecord& e) { return e.phase == Direction::kAscent; }));
}

TEST_CASE("seal+reinit redraws the fit hypothesis") {
  const Dataset d = teacher();
  IterativeTrainer t(small_mlp(), small_config(Strategy::kSealReinit));
  TrainerHooks hooks;
  hooks.on_boundary = [&](std::size_t, const LayeredModel& before, const LayeredModel& after) {
    for (ParamId id = 0; id < after.param_count(); ++id) {
      CHECK((before.param(id).value == after.param(id).value) == t.mask()->in_forget(id));
    }
  };
  t.set_hooks(hooks);
  t.run(d, nullptr);
}

TEST_CASE("seal+freeze holds the fit hypothesis during ascent") {
  const Dataset d = teacher();
  ScheduleConfig c = small_config(Strategy::kSealFreeze);
  c.ascent_epochs = 2;
  IterativeTrainer t(small_mlp(), c);
  LayeredModel prev = t.model();
  std::size_t held = 0;
  TrainerHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& rec, const LayeredModel& m) {
    for (ParamId id : t.mask()->fit) {
      const bool same = prev.param(id).value == m.param(id).value;
      CHECK(same == (rec.phase == Direction::kAscent));
      held += same;
    }
    prev = m;
  };
  t.set_hooks(hooks);
  t.run(d, nullptr);
  CHECK(held == 6 * t.mask()->fit.size());
  for (ParamId id = 0; id < t.model().param_count(); ++id) CHECK_FALSE(t.model().param(id).frozen);
}

TEST_CASE("a fully frozen model does not move") {
  const Dataset d = teacher();
  LayeredModel m = small_mlp();
  std::vector<ParamId> all(m.param_count());
  for (ParamId i = 0; i < all.size(); ++i) all[i] = i;
  set_frozen(m, all, true);
  ScheduleConfig c = small_config(Strategy::kNormal);
  c.epochs = 5;
  IterativeTrainer t(m, c);
  t.run(d, nullptr);
  CHECK(t.model().same_parameters(m));

  set_frozen(m, all, false);
  IterativeTrainer u(m, c);
  u.run(d, nullptr);
  CHECK_FALSE(u.model().same_parameters(m));
}

TEST_CASE("runs are deterministic and resumable") {
  SyntheticParams p;
  p.classes = 3;
  p.per_class = 12;
  p.image = {2, 4, 4};
  const Dataset d = gen_synthetic(SyntheticKind::kTeacherNetwork, p, 4);
  const std::vector<std::size_t> ch = {3, 4};
  const bool pool[] = {true, false};
  LayeredModel m = make_cnn(2, ch, pool, 3);
  Rng rng(2);
  m.initialize(rng);
  ScheduleConfig c = small_config(Strategy::kSeal);
  c.flip = true;
  c.crop_pad = 1;
  c.threshold = 1;

  const auto a = run_schedule(c, m, d, &d);
  const auto b = run_schedule(c, m, d, &d);
  for (std::size_t i = 0; i < a.final_params.size(); ++i) CHECK(a.final_params[i] == b.final_params[i]);

  IterativeTrainer first(m, c);
  while (first.next_epoch() < 5) first.train_epoch(d, &d);
  IterativeTrainer second(LayeredModel{m}, c);
  second.resume(first.model(), first.state(), first.next_epoch());
  second.run(d, &d);
  CHECK(second.model().parameter_values() == a.final_params);
}

TEST_CASE("divergence keeps the partial report") {
  const Dataset d = teacher();
  ScheduleConfig c = small_config(Strategy::kNormalLong);
  c.lr = 1e6;
  c.momentum = 0.0;
  const auto r = run_schedule(c, small_mlp(), d, nullptr);
  CHECK(r.diverged);
  CHECK_FALSE(r.error.empty());
  CHECK(r.records.size() < c.total_epochs());
}

TEST_CASE("finished trainer refuses more epochs") {
  const Dataset d = teacher(2);
  ScheduleConfig c = small_config(Strategy::kNormal);
  c.epochs = 1;
  c.ascent_epochs.reset();
  IterativeTrainer t(small_mlp(), c);
  t.run(d, nullptr);
  CHECK(t.finished());
  CHECK_THROWS_AS(t.train_epoch(d, nullptr), StateError);
}
