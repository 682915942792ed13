#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "csp/eval.hpp"
#include "csp/rng.hpp"

using namespace csp;

namespace {

Detection det(double x1, double y1, double x2, double y2, double score)
{
    return {{x1, y1, x2, y2}, score, -1, -1};
}

ObjectAnnotation gt(double cx, double cy, double h, double w, bool ignore = false)
{
    return {cx, cy, h, w, ignore};
}

ObjectAnnotation gt_box(double x1, double y1, double x2, double y2)
{
    return {0.5 * (x1 + x2), 0.5 * (y1 + y2), y2 - y1, x2 - x1, false};
}

// Exhaustive oracle: among all injective detection-to-GT assignments with
// IoU >= thresh, pick the one that is lexicographically best in score order
// (each detection in turn takes the highest IoU still available).
std::vector<int> match_oracle(const std::vector<Detection>& dets,
                              const std::vector<ObjectAnnotation>& gts, double thresh)
{
    std::vector<std::size_t> order(dets.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

    std::vector<int> best_assign;
    std::vector<double> best_key;

    std::vector<int> assign(dets.size(), -1);
    std::vector<char> used(gts.size(), 0);
    std::function<void(std::size_t, std::vector<double>&)> rec =
        [&](std::size_t i, std::vector<double>& key) {
            if (i == order.size()) {
                if (best_key.empty() || std::lexicographical_compare(best_key.begin(),
                                                                     best_key.end(), key.begin(),
                                                                     key.end())) {
                    best_key = key;
                    best_assign = assign;
                }
                return;
            }
            const Detection& d = dets[order[i]];
            bool any = false;
            for (std::size_t g = 0; g < gts.size(); ++g) {
                if (used[g] || gts[g].ignore) {
                    continue;
                }
                const double v = iou(d.box, gts[g].box());
                if (v >= thresh) {
                    any = true;
                    used[g] = 1;
                    assign[i] = static_cast<int>(g);
                    key.push_back(v);
                    rec(i + 1, key);
                    key.pop_back();
                    assign[i] = -1;
                    used[g] = 0;
                }
            }
            // also consider leaving this detection unmatched
            key.push_back(0.0);
            rec(i + 1, key);
            key.pop_back();
            (void)any;
        };
    std::vector<double> key;
    rec(0, key);
    return best_assign; // flags in score order
}

} // namespace

TEST_CASE("match_detections")
{
    SUBCASE("detections identical to GT are all TPs")
    {
        const std::vector<ObjectAnnotation> gts = {gt(10, 10, 8, 4), gt(30, 30, 10, 5)};
        const std::vector<Detection> dets = {det(8, 6, 12, 14, 0.9), det(27.5, 25, 32.5, 35, 0.8)};
        const MatchResult m = match_detections(dets, gts, 0.5);
        CHECK(m.n_tp == 2);
        CHECK(m.n_fp == 0);
        CHECK(m.n_gt == 2);
    }

    SUBCASE("one detection with no GT is a false positive")
    {
        const MatchResult m = match_detections({det(0, 0, 4, 4, 0.5)}, {}, 0.5);
        CHECK(m.n_tp == 0);
        CHECK(m.n_fp == 1);
        CHECK(m.n_gt == 0);
    }

    SUBCASE("crafted 3x2 overlap matrix matches the exhaustive oracle")
    {
        const std::vector<ObjectAnnotation> gts = {gt_box(0, 0, 10, 10), gt_box(8, 0, 18, 10)};
        const std::vector<Detection> dets = {det(1, 0, 11, 10, 0.9), det(0, 0, 10, 10, 0.8),
                                             det(8, 0, 18, 10, 0.7)};
        const MatchResult m = match_detections(dets, gts, 0.5);
        CHECK(m.det_flag == std::vector<int>{1, 0, 1});
        const std::vector<int> oracle = match_oracle(dets, gts, 0.5);
        for (std::size_t i = 0; i < oracle.size(); ++i) {
            CHECK((m.det_flag[i] == 1) == (oracle[i] >= 0));
            if (oracle[i] >= 0) {
                CHECK(m.det_gt[i] == oracle[i]);
            }
        }
    }

    SUBCASE("random instances agree with the exhaustive oracle")
    {
        auto rng = make_rng(31);
        std::uniform_real_distribution<double> pos(5.0, 40.0);
        std::uniform_real_distribution<double> len(4.0, 15.0);
        std::uniform_real_distribution<double> score(0.1, 1.0);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<ObjectAnnotation> gts;
            const int ng = std::uniform_int_distribution<int>(2, 3)(rng);
            for (int g = 0; g < ng; ++g) {
                gts.push_back(gt(pos(rng), pos(rng), len(rng), len(rng)));
            }
            std::vector<Detection> dets;
            const int nd = std::uniform_int_distribution<int>(2, 4)(rng);
            for (int d = 0; d < nd; ++d) {
                const ObjectAnnotation& base = gts[static_cast<std::size_t>(
                    std::uniform_int_distribution<int>(0, ng - 1)(rng))];
                const double dx = std::uniform_real_distribution<double>(-3.0, 3.0)(rng);
                const double dy = std::uniform_real_distribution<double>(-3.0, 3.0)(rng);
                const BoundBox b = base.box();
                dets.push_back(det(b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy, score(rng)));
            }
            const MatchResult m = match_detections(dets, gts, 0.5);
            const std::vector<int> oracle = match_oracle(dets, gts, 0.5);
            for (std::size_t i = 0; i < oracle.size(); ++i) {
                CHECK((m.det_flag[i] == 1) == (oracle[i] >= 0));
            }
        }
    }

    SUBCASE("duplicate detections of one GT: one TP, rest FP")
    {
        const std::vector<ObjectAnnotation> gts = {gt(10, 10, 8, 4)};
        const std::vector<Detection> dets = {det(8, 6, 12, 14, 0.9), det(8, 6, 12, 14, 0.8),
                                             det(8, 6, 12, 14, 0.7)};
        const MatchResult m = match_detections(dets, gts, 0.5);
        CHECK(m.n_tp == 1);
        CHECK(m.n_fp == 2);
    }

    SUBCASE("ignore regions neither count as GT nor penalize detections")
    {
        const std::vector<ObjectAnnotation> gts = {gt(10, 10, 8, 4, true), gt(30, 30, 8, 4)};
        const std::vector<Detection> dets = {det(8, 6, 12, 14, 0.9), det(28, 26, 32, 34, 0.8)};
        const MatchResult m = match_detections(dets, gts, 0.5);
        CHECK(m.n_gt == 1);
        CHECK(m.n_tp == 1);
        CHECK(m.n_fp == 0);
        CHECK(m.det_flag[0] == -1); // absorbed by the ignore region
    }
}

namespace {

// Shared 3-image fixture with hand-computed metrics. Non-overlapping unit
// boxes make every IoU either 1 or 0.
std::vector<ImageEval> hand_fixture()
{
    std::vector<ImageEval> images(3);
    images[0].gts = {gt_box(0, 0, 10, 10), gt_box(20, 0, 30, 10)};
    images[1].gts = {gt_box(0, 0, 10, 10)};
    images[2].gts = {gt_box(0, 0, 10, 10)};

    images[0].dets = {det(0, 0, 10, 10, 0.95), det(20, 0, 30, 10, 0.85),
                      det(0, 0, 10, 10, 0.75)};
    images[1].dets = {det(50, 50, 60, 60, 0.90), det(0, 0, 10, 10, 0.70)};
    images[2].dets = {det(0, 0, 10, 10, 0.80), det(50, 50, 60, 60, 0.60)};
    return images;
}

} // namespace

TEST_CASE("log_average_miss_rate")
{
    SUBCASE("hand fixture reproduces the manually computed envelope")
    {
        // Sweeping thresholds over {.95,.9,.85,.8,.75,.7,.6} gives operating
        // points (fppi, mr): (0,.75) (1/3,.75) (1/3,.5) (1/3,.25) (2/3,.25)
        // (2/3,0) (1,0), plus the empty point (0,1). The envelope at the nine
        // reference FPPIs is 0.75 for refs up to 10^-0.5 (1/3 > 0.3162), 0.25
        // at 10^-0.25, and 0 -> clamp 1e-6 at 10^0.
        const FppiCurve curve = log_average_miss_rate(hand_fixture(), 0.5);
        for (int k = 0; k < 7; ++k) {
            CHECK(curve.miss_rate[static_cast<std::size_t>(k)] == doctest::Approx(0.75));
        }
        CHECK(curve.miss_rate[7] == doctest::Approx(0.25));
        CHECK(curve.miss_rate[8] == doctest::Approx(0.0));
        const double expected =
            std::pow(0.75, 7.0 / 9.0) * std::pow(0.25, 1.0 / 9.0) * std::pow(1e-6, 1.0 / 9.0);
        CHECK(std::abs(curve.mr2 - expected) < 1e-9);
    }

    SUBCASE("perfect detections clamp to 1e-6")
    {
        std::vector<ImageEval> images(2);
        images[0].gts = {gt_box(0, 0, 10, 10)};
        images[0].dets = {det(0, 0, 10, 10, 0.9)};
        images[1].gts = {gt_box(5, 5, 12, 12)};
        images[1].dets = {det(5, 5, 12, 12, 0.8)};
        const FppiCurve curve = log_average_miss_rate(images, 0.5);
        CHECK(curve.mr2 == doctest::Approx(1e-6));
    }

    SUBCASE("constant miss rate is its own geometric mean")
    {
        // 5 GT in one image, 4 detected with no FPs: every envelope point is
        // 0.2, so the log-average is exactly 0.2.
        std::vector<ImageEval> images(1);
        for (int i = 0; i < 5; ++i) {
            images[0].gts.push_back(gt_box(15.0 * i, 0, 15.0 * i + 10, 10));
        }
        for (int i = 0; i < 4; ++i) {
            images[0].dets.push_back(det(15.0 * i, 0, 15.0 * i + 10, 10, 0.9 - 0.1 * i));
        }
        const FppiCurve curve = log_average_miss_rate(images, 0.5);
        CHECK(curve.mr2 == doctest::Approx(0.2).epsilon(1e-12));
    }

    SUBCASE("all-miss case gives 1.0")
    {
        std::vector<ImageEval> images(1);
        images[0].gts = {gt_box(0, 0, 10, 10)};
        const FppiCurve curve = log_average_miss_rate(images, 0.5);
        CHECK(curve.mr2 == doctest::Approx(1.0));
    }

    SUBCASE("zero GT rejected")
    {
        std::vector<ImageEval> images(1);
        CHECK_THROWS(log_average_miss_rate(images, 0.5));
    }
}

TEST_CASE("average_precision")
{
    SUBCASE("perfect detections give 1")
    {
        std::vector<ImageEval> images(1);
        images[0].gts = {gt_box(0, 0, 10, 10), gt_box(20, 0, 30, 10)};
        images[0].dets = {det(0, 0, 10, 10, 0.9), det(20, 0, 30, 10, 0.8)};
        CHECK(average_precision(images, 0.5) == doctest::Approx(1.0));
    }

    SUBCASE("zero detections give 0")
    {
        std::vector<ImageEval> images(1);
        images[0].gts = {gt_box(0, 0, 10, 10)};
        CHECK(average_precision(images, 0.5) == 0.0);
    }

    SUBCASE("hand-enumerated TP/FP/TP/FP sequence over 2 GT")
    {
        std::vector<ImageEval> images(1);
        images[0].gts = {gt_box(0, 0, 10, 10), gt_box(20, 0, 30, 10)};
        images[0].dets = {det(0, 0, 10, 10, 0.9), det(50, 50, 60, 60, 0.8),
                          det(20, 0, 30, 10, 0.7), det(70, 70, 80, 80, 0.6)};
        // envelope: 1 on (0, .5], 2/3 on (.5, 1]
        CHECK(average_precision(images, 0.5) ==
              doctest::Approx(1.0 * 0.5 + (2.0 / 3.0) * 0.5).epsilon(1e-12));
    }

    SUBCASE("hand fixture AP")
    {
        // PR walk: p 1@r.25, .5@.25, 2/3@.5, .75@.75, .6@.75, 2/3@1, 4/7@1
        // envelope: 1, .75, .75, 2/3 over the four recall quarters.
        const double expected = 0.25 * (1.0 + 0.75 + 0.75 + 2.0 / 3.0);
        CHECK(average_precision(hand_fixture(), 0.5) == doctest::Approx(expected).epsilon(1e-12));
    }

    SUBCASE("AP equals 1 iff some threshold captures all GT with zero FPs above it")
    {
        std::vector<ImageEval> images(1);
        images[0].gts = {gt_box(0, 0, 10, 10), gt_box(20, 0, 30, 10)};
        images[0].dets = {det(0, 0, 10, 10, 0.9), det(20, 0, 30, 10, 0.8),
                          det(50, 50, 60, 60, 0.7)};
        CHECK(average_precision(images, 0.5) == doctest::Approx(1.0));
        // push the FP above the weakest TP and AP drops below 1
        images[0].dets[2].score = 0.85;
        CHECK(average_precision(images, 0.5) < 1.0);
    }
}

TEST_CASE("false positives only hurt")
{
    auto rng = make_rng(301);
    std::uniform_real_distribution<double> score(0.05, 1.0);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<ImageEval> images(3);
        for (auto& img : images) {
            const int ng = std::uniform_int_distribution<int>(1, 3)(rng);
            for (int g = 0; g < ng; ++g) {
                const double x = 15.0 * g;
                img.gts.push_back(gt_box(x, 0, x + 10, 10));
                if (score(rng) > 0.3) {
                    img.dets.push_back(det(x, 0, x + 10, 10, score(rng)));
                }
            }
        }
        const double ap_before = average_precision(images, 0.5);
        const FppiCurve mr_before = log_average_miss_rate(images, 0.5);

        images[0].dets.push_back(det(200, 200, 210, 210, score(rng)));
        const double ap_after = average_precision(images, 0.5);
        const FppiCurve mr_after = log_average_miss_rate(images, 0.5);

        CHECK(ap_after <= ap_before + 1e-12);
        for (std::size_t k = 0; k < 9; ++k) {
            CHECK(mr_after.miss_rate[k] >= mr_before.miss_rate[k] - 1e-12);
        }
    }
}

TEST_CASE("metric order invariance among equal scores")
{
    std::vector<ImageEval> images(1);
    images[0].gts = {gt_box(0, 0, 10, 10), gt_box(20, 0, 30, 10)};
    images[0].dets = {det(0, 0, 10, 10, 0.5), det(20, 0, 30, 10, 0.5),
                      det(50, 50, 60, 60, 0.5)};
    const double ap1 = average_precision(images, 0.5);
    const double mr1 = log_average_miss_rate(images, 0.5).mr2;
    // same multiset of outcomes at one score: metrics must not change with
    // permutation because ties collapse into one operating point
    std::swap(images[0].dets[0], images[0].dets[2]);
    CHECK(average_precision(images, 0.5) == doctest::Approx(ap1).epsilon(1e-12));
    CHECK(log_average_miss_rate(images, 0.5).mr2 == doctest::Approx(mr1).epsilon(1e-12));
}

TEST_CASE("mean_center_error")
{
    std::vector<ImageEval> images(1);
    images[0].gts = {gt_box(0, 0, 10, 10)};
    images[0].dets = {det(1, 1, 11, 11, 0.9)}; // shifted by (1, 1)
    CHECK(mean_center_error(images, 0.5) == doctest::Approx(std::sqrt(2.0)));

    std::vector<ImageEval> empty(1);
    empty[0].gts = {gt_box(0, 0, 10, 10)};
    CHECK(std::isinf(mean_center_error(empty, 0.5)));
}
