#include <catch2/catch_amalgamated.hpp>

#include "selfcollage/datasets.hpp"
#include "selfcollage/io/image_io.hpp"

#include "helpers.hpp"

using namespace selfcollage;

TEST_CASE("synthetic shapes cover all configured types") {
    ShapeParams full;  // 3 shapes x 4 colors
    SyntheticShapeSource src(full, 600, 5);
    std::set<std::pair<int, int>> types;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const auto m = src.meta(i);
        types.insert({static_cast<int>(m.shape), static_cast<int>(m.color)});
    }
    REQUIRE(types.size() == 12);

    ShapeParams two;
    two.shapes = {Shape::circle};
    two.colors = {Color::red, Color::blue};
    SyntheticShapeSource src2(two, 200, 6);
    types.clear();
    for (std::size_t i = 0; i < src2.size(); ++i) {
        const auto m = src2.meta(i);
        types.insert({static_cast<int>(m.shape), static_cast<int>(m.color)});
    }
    REQUIRE(types.size() == 2);
}

TEST_CASE("shape params validation") {
    ShapeParams p;
    p.colors = {Color::red};
    REQUIRE_THROWS_AS(validate(p), InvalidInput);
    p = ShapeParams{};
    p.shapes.clear();
    REQUIRE_THROWS_AS(validate(p), InvalidInput);
}

TEST_CASE("circle mask area matches the analytic value") {
    ShapeParams p;
    p.shapes = {Shape::circle};
    p.canvas = 96;
    p.size_min = 40;
    p.size_max = 80;
    SyntheticShapeSource src(p, 30, 7);
    for (std::size_t i = 0; i < src.size(); ++i) {
        const auto meta = src.meta(i);
        const auto item = src.get(i);
        REQUIRE(item.mask.has_value());
        const double r = meta.size / 2.0;
        const double analytic = M_PI * r * r;
        const double measured = item.mask->sum();
        REQUIRE(std::abs(measured - analytic) / analytic <= 0.05);
    }
}

TEST_CASE("shape background color differs from the object color") {
    ShapeParams p;
    SyntheticShapeSource src(p, 60, 8);
    for (std::size_t i = 0; i < src.size(); ++i) {
        const auto item = src.get(i);
        const auto meta = src.meta(i);
        std::uint8_t fg[3];
        color_rgb(meta.color, fg);
        // corner pixel is background
        REQUIRE_FALSE((item.image.at(0, 0, 0) == fg[0] && item.image.at(0, 0, 1) == fg[1] &&
                       item.image.at(0, 0, 2) == fg[2]));
        REQUIRE(item.mask->h == item.image.h);
        REQUIRE(item.mask->w == item.image.w);
    }
}

TEST_CASE("square and triangle mask areas") {
    ShapeParams p;
    p.canvas = 64;
    p.size_min = 32;
    p.size_max = 32;
    p.shapes = {Shape::square};
    SyntheticShapeSource sq(p, 3, 1);
    REQUIRE(sq.get(0).mask->sum() == Catch::Approx(32.0 * 32.0).epsilon(0.07));
    p.shapes = {Shape::triangle};
    SyntheticShapeSource tr(p, 3, 1);
    REQUIRE(tr.get(0).mask->sum() == Catch::Approx(0.5 * 32.0 * 32.0).epsilon(0.10));
}

TEST_CASE("noise backgrounds: determinism and no salient object") {
    NoiseBackgroundSource noise(4, 64, 11);
    const Image a = noise.get(0);
    const Image b = noise.get(0);
    REQUIRE(a.px == b.px);
    REQUIRE(noise.get(1).px != a.px);
    NoiseBackgroundSource other(4, 64, 12);
    REQUIRE(other.get(0).px != a.px);

    // attention peakiness of noise stays below that of a single-shape image
    HandcraftedBackbone bb(8);
    auto ratio = [&](const Image& img) {
        const auto att = bb.cls_attention(img);
        double mean = 0.0;
        for (double v : att.v) mean += v;
        mean /= static_cast<double>(att.v.size());
        return att.max() / mean;
    };
    ShapeParams p;
    SyntheticShapeSource shapes(p, 4, 13);
    double shape_ratio = 0.0, noise_ratio = 0.0;
    for (int i = 0; i < 4; ++i) {
        shape_ratio += ratio(shapes.get(static_cast<std::size_t>(i)).image);
        noise_ratio += ratio(noise.get(static_cast<std::size_t>(i)));
    }
    REQUIRE(noise_ratio < shape_ratio);
}

TEST_CASE("directory sources") {
    const auto dir = testutil::temp_dir("dirsrc");
    Rng rng(19);
    for (int i = 0; i < 10; ++i)
        write_png(dir + "/img_" + std::to_string(i) + ".png", testutil::random_image(24, 24, rng));
    DirectoryObjectSource objects(dir, MaskPolicy::analytic_none);
    REQUIRE(objects.size() == 10);
    REQUIRE_FALSE(objects.get(0).mask.has_value());
    DirectoryBackgroundSource bgs(dir);
    REQUIRE(bgs.size() == 10);
    REQUIRE(bgs.get(3).h == 24);
    // restartable: two passes identical
    const auto pass1 = objects.get(5).image.px;
    const auto pass2 = objects.get(5).image.px;
    REQUIRE(pass1 == pass2);

    REQUIRE_THROWS_AS(DirectoryObjectSource("/nonexistent/dir", MaskPolicy::analytic_none), DataError);
    const auto empty = testutil::temp_dir("emptydir");
    REQUIRE_THROWS_AS(DirectoryObjectSource(empty, MaskPolicy::analytic_none), DataError);

    // jpeg files load through the same source
    const auto jdir = testutil::temp_dir("jpegsrc");
    testutil::write_tiny_jpeg(jdir);
    DirectoryBackgroundSource jb(jdir);
    REQUIRE(jb.size() == 1);
    REQUIRE(jb.get(0).w == 8);
}

TEST_CASE("attention-threshold masks cover synthetic shapes") {
    const auto dir = testutil::temp_dir("maskdir");
    ShapeParams p;
    p.canvas = 64;
    p.size_min = 24;
    p.size_max = 40;
    SyntheticShapeSource shapes(p, 25, 17);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "/shape_%03zu.png", i);
        write_png(dir + name, shapes.get(i).image);
    }

    DirectoryObjectSource src(dir, MaskPolicy::attention_threshold, 4);
    int covered = 0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const auto item = src.get(i);
        REQUIRE(item.mask.has_value());
        // oracle: the analytic mask from the generator (zero-padded names keep
        // the sorted file order aligned with generation order)
        const auto analytic = shapes.get(i).mask.value();
        double inter = 0.0, area = 0.0;
        for (std::size_t j = 0; j < analytic.v.size(); ++j) {
            area += analytic.v[j];
            if (analytic.v[j] > 0 && item.mask->v[j] > 0) inter += 1.0;
        }
        if (inter / area >= 0.5) ++covered;
    }
    REQUIRE(covered >= static_cast<int>(0.8 * static_cast<double>(src.size())));
}

TEST_CASE("fsc147 adapter parses boxes and point counts") {
    const auto dir = testutil::temp_dir("fsc");
    nlohmann::json ann;
    auto make_box = [](double x1, double y1, double x2, double y2) {
        return nlohmann::json::array({{x1, y1}, {x2, y1}, {x2, y2}, {x1, y2}});
    };
    nlohmann::json points12 = nlohmann::json::array();
    for (int i = 0; i < 12; ++i) points12.push_back({10.0 + i, 20.0 + i});
    ann["a.jpg"] = {{"box_examples_coordinates",
                     nlohmann::json::array({make_box(1, 2, 11, 22), make_box(5, 5, 9, 9),
                                            make_box(0, 0, 4, 4), make_box(7, 1, 9, 3)})},
                    {"points", points12},
                    {"extra_key_ignored", 1}};
    nlohmann::json points3 = nlohmann::json::array({{1.0, 1.0}, {2.0, 2.0}, {3.0, 3.0}});
    ann["b.jpg"] = {{"box_examples_coordinates", nlohmann::json::array({make_box(2, 2, 6, 8),
                                                                        make_box(1, 1, 3, 3),
                                                                        make_box(4, 4, 8, 8)})},
                    {"points", points3}};
    std::ofstream(dir + "/ann.json") << ann.dump();
    nlohmann::json split{{"test", {"a.jpg", "b.jpg"}}, {"train", {"a.jpg"}}};
    std::ofstream(dir + "/split.json") << split.dump();

    const auto records = fsc147_adapter(dir + "/ann.json", dir + "/split.json", "/imgs", "test");
    REQUIRE(records.size() == 2);
    REQUIRE(records[0].id == "a.jpg");
    REQUIRE(records[0].gt_count == 12);
    REQUIRE(records[0].exemplar_boxes.size() == 4);
    REQUIRE(records[0].exemplar_boxes[0] == Box{1, 2, 10, 20});
    REQUIRE(records[0].image_path == "/imgs/a.jpg");
    REQUIRE(records[1].gt_count == 3);

    // oracle: counts equal the brute-force length of the points array
    for (const auto& rec : records)
        REQUIRE(rec.gt_count == static_cast<int>(ann.at(rec.id).at("points").size()));

    const auto train = fsc147_adapter(dir + "/ann.json", dir + "/split.json", "", "train");
    REQUIRE(train.size() == 1);

    // schema violations name the offending key
    nlohmann::json bad = ann;
    bad["a.jpg"].erase("points");
    std::ofstream(dir + "/bad.json") << bad.dump();
    try {
        fsc147_adapter(dir + "/bad.json", dir + "/split.json", "", "test");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        REQUIRE(std::string(e.what()).find("points") != std::string::npos);
    }
    REQUIRE_THROWS_AS(fsc147_adapter(dir + "/ann.json", dir + "/split.json", "", "val"), DataError);
    REQUIRE_THROWS_AS(fsc147_adapter(dir + "/missing.json", dir + "/split.json", "", "test"), DataError);
}
