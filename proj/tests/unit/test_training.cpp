#include <doctest.h>

#include <cmath>

#include "cardioseg/phantom.hpp"
#include "cardioseg/training.hpp"
#include "oracles.hpp"

using namespace cardioseg;

namespace {

TrainConfig tiny_config() {
    TrainConfig c;
    c.epochs = 2;
    c.batch_size = 2;
    c.base_channels = 2;
    c.levels = 2;
    c.patch = {16, 16, 4};
    c.patches_per_volume = 2;
    c.seed = 3;
    return c;
}

struct Stop {};

}  // namespace

TEST_CASE("learning-rate schedule constants") {
    TrainConfig c;
    CHECK(lr_schedule(1, c) == 0.005);
    CHECK(lr_schedule(40, c) == 0.005);
    CHECK(lr_schedule(41, c) == 0.001);
    CHECK(lr_schedule(60, c) == 0.001);
    CHECK(std::abs(lr_schedule(100, c) - 0.0004457) < 1e-7);
    for (std::size_t e = 61; e < 100; ++e) CHECK(lr_schedule(e + 1, c) < lr_schedule(e, c));
    CHECK_THROWS_AS(lr_schedule(0, c), std::out_of_range);
    CHECK_THROWS_AS(lr_schedule(101, c), std::out_of_range);
}

TEST_CASE("config parsing") {
    const TrainConfig c = parse_train_config(R"({"epochs": 5, "patch": [32, 32, 4], "lr": {"phase1": 0.01}})");
    CHECK(c.epochs == 5);
    CHECK(c.patch == Extent3{32, 32, 4});
    CHECK(c.lr.phase1 == 0.01);
    CHECK(c.lr.phase2 == 0.001);
    CHECK(c.batch_size == 32);
    CHECK_THROWS_AS(parse_train_config(R"({"epoch": 5})"), FormatError);
    CHECK_THROWS_AS(parse_train_config(R"({"lr": {"phase3": 1}})"), FormatError);
    CHECK_THROWS_AS(parse_train_config(R"({"epochs": "many"})"), FormatError);
    CHECK_THROWS_AS(parse_train_config(R"({"epochs": 0})"), FormatError);
    CHECK_THROWS_AS(parse_train_config(R"({"patch": [30, 32, 4]})"), FormatError);
    CHECK_THROWS_AS(parse_train_config("[1"), FormatError);
}

TEST_CASE("epoch log format") {
    EpochLog l{3, 0.005, 0.5, 0.25, std::nan(""), std::nan(""), std::nan(""), std::nan("")};
    CHECK(epoch_log_line(l) == "3,0.005,0.5,0.25,nan,nan,nan,nan\n");
}

TEST_CASE("training is deterministic and resumable") {
    oracle::TempDir dir("train");
    CohortOptions o;
    o.count = 3;
    o.seed = 4;
    const DatasetIndex idx = generate_cohort(o, dir.path());
    const TrainConfig cfg = tiny_config();

    const TrainResult a = train(idx, cfg);
    const TrainResult b = train(idx, cfg);
    CHECK(serialize_model(a.params) == serialize_model(b.params));
    CHECK(a.log_csv == b.log_csv);
    REQUIRE(a.log.size() == 2);
    CHECK(a.log_csv.rfind(kEpochLogHeader, 0) == 0);
    CHECK(std::isfinite(a.log[1].train_loss));

    TrainConfig ck = cfg;
    ck.checkpoint_every = 1;
    TrainOptions opt;
    opt.checkpoint_path = dir / "c.ckpt";
    opt.on_epoch = [](const EpochLog& l) {
        if (l.epoch == 2) throw Stop{};
    };
    CHECK_THROWS_AS(train(idx, ck, opt), Stop);
    TrainOptions resume;
    resume.resume_from = dir / "c.ckpt";
    const TrainResult r = train(idx, ck, resume);
    CHECK(serialize_model(r.params) == serialize_model(a.params));
    CHECK(r.log_csv == a.log_csv);

    TrainConfig other = cfg;
    other.base_channels = 4;
    CHECK_THROWS_AS(train(idx, other, resume), FormatError);

    const MetricsReport rep = evaluate(a.params, idx, Split::Train);
    CHECK(rep.rows.size() == 2 * idx.select(Split::Train).size());
}

TEST_CASE("an empty training split is rejected") {
    DatasetIndex idx;
    CHECK_THROWS_AS(train(idx, tiny_config()), std::invalid_argument);
}
