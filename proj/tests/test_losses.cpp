#include <doctest.h>

#include "mrovseg/gradcheck.hpp"
#include "mrovseg/losses.hpp"

using namespace mrovseg;

namespace {

template <class S>
SampleTargets<S> two_box_targets(int h, int w) {
    SampleTargets<S> t;
    t.classes = {0, 2};
    TensorT<S> m1({h, w}, S(0)), m2({h, w}, S(0));
    for (int y = 0; y < h / 2; ++y)
        for (int x = 0; x < w; ++x) m1[y * w + x] = S(1);
    for (int y = h / 2; y < h; ++y)
        for (int x = 0; x < w / 2; ++x) m2[y * w + x] = S(1);
    t.masks = {m1, m2};
    return t;
}

}  // namespace

TEST_CASE("perfect prediction drives the loss under 0.01") {
    int N = 4, K = 3, h = 8, w = 8;
    auto targets = two_box_targets<float>(h, w);
    // saturated logits: matched queries 1,3 hit their classes; others no-object
    TensorT<float> logits({N, K + 1}, -30.0f);
    logits[0 * 4 + 3] = 30.0f;                // no-object
    logits[1 * 4 + 0] = 30.0f;                // class 0
    logits[2 * 4 + 3] = 30.0f;                // no-object
    logits[3 * 4 + 2] = 30.0f;                // class 2
    TensorT<float> masks({N, h, w}, -40.0f);
    for (int64_t i = 0; i < 64; ++i) {
        if (targets.masks[0][i] > 0) masks[1 * 64 + i] = 40.0f;
        if (targets.masks[1][i] > 0) masks[3 * 64 + i] = 40.0f;
    }
    std::vector<int> assignment = {1, 3};
    auto loss = set_loss(logits, masks, targets, assignment, {});
    CHECK(loss.item() < 0.01f);
}

TEST_CASE("dice term is zero when prediction equals the binary target") {
    // directly check on saturated logits: sigmoid -> exactly 0/1 in f32
    int h = 4, w = 4;
    SampleTargets<float> t;
    t.classes = {0};
    TensorT<float> m({h, w}, 0.0f);
    for (int i = 0; i < 8; ++i) m[i] = 1.0f;
    t.masks = {m};
    TensorT<float> masks({1, h, w});
    for (int64_t i = 0; i < 16; ++i) masks[i] = t.masks[0][i] > 0 ? 200.0f : -200.0f;
    TensorT<float> logits({1, 2}, 0.0f);
    logits[0] = 50.0f;
    LossBreakdown b;
    (void)set_loss(logits, masks, t, {0}, {}, &b);
    CHECK(b.dice == doctest::Approx(0.0).epsilon(1e-7));
    CHECK(b.bce == doctest::Approx(0.0).epsilon(1e-7));
}

TEST_CASE("matching picks the obviously better query") {
    int N = 3, K = 2, h = 4, w = 4;
    SampleTargets<float> t;
    t.classes = {1};
    TensorT<float> gt({h, w}, 0.0f);
    for (int i = 0; i < 8; ++i) gt[i] = 1.0f;
    t.masks = {gt};
    TensorT<float> logits({N, K + 1}, 0.0f);
    logits[2 * 3 + 1] = 8.0f;  // query 2 confident in class 1
    TensorT<float> masks({N, h, w}, -5.0f);
    for (int i = 0; i < 8; ++i) masks[2 * 16 + i] = 5.0f;  // query 2 matches the mask
    auto a = match_targets(logits, masks, t, {});
    REQUIRE(a.size() == 1);
    CHECK(a[0] == 2);
}

TEST_CASE("empty targets supervise everything toward no-object") {
    SampleTargets<float> t;  // G = 0
    TensorT<float> logits({2, 3}, 0.0f);
    TensorT<float> masks({2, 2, 2}, 0.0f);
    auto a = match_targets(logits, masks, t, {});
    CHECK(a.empty());
    auto loss = set_loss(logits, masks, t, a, {});
    CHECK(loss.item() > 0.0f);  // CE toward no-object at uniform logits
    // saturated no-object logits drive it to ~0
    TensorT<float> sat({2, 3}, -30.0f);
    sat[0 * 3 + 2] = 30.0f;
    sat[1 * 3 + 2] = 30.0f;
    CHECK(set_loss(sat, masks, t, a, {}).item() < 1e-5f);
}

TEST_CASE("more instances than queries is a contract error") {
    SampleTargets<float> t;
    t.classes = {0, 0, 0};
    TensorT<float> m({2, 2}, 1.0f);
    t.masks = {m, m, m};
    TensorT<float> logits({2, 2}, 0.0f);
    TensorT<float> masks({2, 2, 2}, 0.0f);
    CHECK_THROWS_AS(match_targets(logits, masks, t, {}), ContractError);
}

TEST_CASE("set loss gradient check at tiny dims (64-bit)") {
    int N = 3, K = 2, h = 3, w = 3;
    SampleTargets<double> t;
    t.classes = {1};
    TensorT<double> gt({h, w}, 0.0);
    for (int i = 0; i < 4; ++i) gt[i] = 1.0;
    t.masks = {gt};
    for (uint64_t seed : {20ULL, 21ULL}) {
        Rng rng(seed);
        ParameterStoreT<double> store;
        auto& logits = store.add("logits", randn<double>({N, K + 1}, rng));
        auto& masks = store.add("masks", randn<double>({N, h, w}, rng));
        // freeze the assignment outside the differentiated function
        auto assignment = match_targets(logits, masks, t, {});
        GradCheckOptions opt;
        auto rep = check_gradients("set_loss", store,
                                   [&] { return set_loss(logits, masks, t, assignment, {}); }, opt);
        INFO("max_rel_err=", rep.max_rel_err);
        CHECK(rep.pass);
    }
}
