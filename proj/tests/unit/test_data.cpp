// SPDX-License-Identifier: Apache-2.0
#include "lumbar_align/data.hpp"
#include "lumbar_align/errors.hpp"
#include "lumbar_align/image.hpp"
#include "lumbar_align/rng.hpp"
#include "lumbar_align/synth.hpp"
#include "lumbar_align/text.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>
#include <png.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

using namespace lumbar_align;
using test_support::bitwise_equal;
using test_support::TempDir;

namespace {

RawImage gray(std::size_t h, std::size_t w, std::uint64_t seed) {
    RawImage raw;
    raw.height = h;
    raw.width = w;
    raw.max_value = 255.0;
    std::mt19937_64 gen(seed);
    for (std::size_t i = 0; i < h * w; ++i) {
        raw.pixels.push_back(static_cast<double>(gen() % 256));
    }
    return raw;
}

Sample make_sample(const std::string& id, std::size_t cls) {
    Sample s;
    s.id = id;
    s.image_ref = "synthetic:class=" + std::string(cls == kClassLbp ? "lbp" : "normal") + ",seed=1";
    s.caption = cls == kClassLbp ? "Disc bulging at L4-L5." : "No abnormality detected.";
    s.label = cls == kClassLbp ? LabelVector{1, 0} : LabelVector{0, 1};
    return s;
}

std::vector<Sample> make_samples(std::size_t majority, std::size_t minority) {
    std::vector<Sample> out;
    for (std::size_t i = 0; i < majority + minority; ++i) {
        out.push_back(make_sample("s" + std::to_string(i), i < majority ? kClassLbp : kClassNoFinding));
    }
    return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream(path) << text;
}

void write_png_gray(const std::filesystem::path& path, std::size_t h, std::size_t w, std::uint8_t value) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    ASSERT_NE(fp, nullptr);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<std::uint8_t> row(w, value);
    for (std::size_t y = 0; y < h; ++y) {
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

} // namespace

TEST(RngTest, StreamsArePinned) {
    Rng r(42);
    const std::uint64_t first = r.next_u64();
    const std::uint64_t second = r.next_u64();
    EXPECT_EQ(first, 13930160852258120406ULL);
    EXPECT_EQ(second, 11788048577503494824ULL);
    EXPECT_EQ(derive_seed(7, {1, 2}), 7678777974472554187ULL);
    EXPECT_EQ(derive_seed(7, "split"), 833653255046047791ULL);
    EXPECT_NE(derive_seed(7, {1, 2}), derive_seed(7, {2, 1}));
}

TEST(RngTest, IndexStaysInRange) {
    Rng r(3);
    for (int i = 0; i < 1000; ++i) {
        EXPECT_LT(r.index(7), 7u);
        const double u = r.uniform();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
    }
}

TEST(ManifestTest, EmptyFileGivesEmptyList) {
    TempDir dir("manifest");
    write_text(dir.path() / "m.jsonl", "");
    EXPECT_TRUE(load_manifest(dir.path() / "m.jsonl").empty());
}

TEST(ManifestTest, OneValidLine) {
    TempDir dir("manifest");
    write_text(dir.path() / "m.jsonl",
               R"({"id":"a","image_ref":"x.pgm","caption":"Disc bulge.","aug_captions":["one","two"],"label":[1,0]})"
               "\n");
    const auto samples = load_manifest(dir.path() / "m.jsonl");
    ASSERT_EQ(samples.size(), 1u);
    EXPECT_EQ(samples[0].id, "a");
    EXPECT_EQ(samples[0].aug_captions.size(), 2u);
    EXPECT_EQ(samples[0].class_index(), kClassLbp);
}

TEST(ManifestTest, BadLabelNamesLine) {
    TempDir dir("manifest");
    write_text(dir.path() / "m.jsonl",
               R"({"id":"a","image_ref":"x.pgm","caption":"c","aug_captions":[],"label":[1,2]})"
               "\n");
    try {
        load_manifest(dir.path() / "m.jsonl");
        FAIL() << "expected InputError";
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find(":1:"), std::string::npos) << e.what();
    }
}

TEST(ManifestTest, MalformedAndIncompleteLinesAreRejected) {
    TempDir dir("manifest");
    const std::string good = R"({"id":"a","image_ref":"x","caption":"c","aug_captions":[],"label":[0,1]})";
    for (const std::string& bad : {std::string("{not json"), std::string(R"({"id":"b","caption":"c","label":[0,1]})"),
                                  std::string(R"({"id":"b","image_ref":"x","caption":"c","aug_captions":[],"label":[0,0]})"),
                                  std::string(R"({"id":"b","image_ref":"x","caption":"c","aug_captions":["1","2","3","4","5"],"label":[0,1]})")}) {
        write_text(dir.path() / "m.jsonl", good + "\n" + bad + "\n");
        try {
            load_manifest(dir.path() / "m.jsonl");
            ADD_FAILURE() << "accepted: " << bad;
        } catch (const InputError& e) {
            EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
        }
    }
    EXPECT_THROW(load_manifest(dir.path() / "missing.jsonl"), InputError);
}

TEST(ManifestTest, WriteLoadRoundTrip) {
    TempDir dir("manifest");
    auto samples = make_samples(3, 2);
    samples[1].aug_captions = {"a \"quoted\" caption", "b"};
    write_manifest(dir.path() / "m.jsonl", samples);
    const auto loaded = load_manifest(dir.path() / "m.jsonl");
    ASSERT_EQ(loaded.size(), samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        EXPECT_EQ(loaded[i].id, samples[i].id);
        EXPECT_EQ(loaded[i].caption, samples[i].caption);
        EXPECT_EQ(loaded[i].aug_captions, samples[i].aug_captions);
        EXPECT_EQ(loaded[i].label, samples[i].label);
    }
}

TEST(PreprocessTest, RectangularSingleChannelIsReplicated) {
    const Tensor out = preprocess_image(gray(100, 50, 1), 64);
    ASSERT_EQ(out.shape(), (Shape{3, 64, 64}));
    const std::size_t plane = 64 * 64;
    for (std::size_t i = 0; i < plane; ++i) {
        EXPECT_EQ(out[i], out[plane + i]);
        EXPECT_EQ(out[i], out[2 * plane + i]);
        EXPECT_TRUE(std::isfinite(out[i]));
    }
    // Horizontal padding of a tall image leaves the left border zero.
    EXPECT_EQ(out[32 * 64], 0.0);
}

TEST(PreprocessTest, ConstantSquareImageStaysConstant) {
    RawImage raw;
    raw.height = raw.width = 16;
    raw.pixels.assign(256, 128.0);
    const Tensor out = preprocess_image(raw, 16);
    for (double v : out.data()) {
        EXPECT_NEAR(v, 128.0 / 255.0, 1e-15);
    }
}

TEST(PreprocessTest, IsDeterministicAndStandardizes) {
    const RawImage raw = gray(37, 91, 2);
    EXPECT_TRUE(bitwise_equal(preprocess_image(raw, 32).data(), preprocess_image(raw, 32).data()));
    const std::vector<Tensor> images{resize_to_square(raw, 32), resize_to_square(gray(20, 20, 3), 32)};
    const NormStats stats = compute_norm_stats(images);
    double sum = 0.0;
    double sq = 0.0;
    for (const auto& img : images) {
        const Tensor z = standardize(img, stats);
        for (std::size_t i = 0; i < 32 * 32; ++i) {
            sum += z[i];
            sq += z[i] * z[i];
        }
    }
    EXPECT_NEAR(sum / 2048.0, 0.0, 1e-12);
    EXPECT_NEAR(sq / 2048.0, 1.0, 1e-12);
}

TEST(PreprocessTest, EmptyImageIsRejected) {
    EXPECT_THROW(preprocess_image(RawImage{}, 16), InputError);
}

TEST(PreprocessTest, ThreeChannelInputKeepsChannels) {
    RawImage raw;
    raw.channels = 3;
    raw.height = raw.width = 4;
    raw.max_value = 1.0;
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < 16; ++i) {
            raw.pixels.push_back(0.25 * static_cast<double>(c + 1));
        }
    }
    const Tensor out = preprocess_image(raw, 4);
    EXPECT_NEAR(out[0], 0.25, 1e-15);
    EXPECT_NEAR(out[16], 0.5, 1e-15);
    EXPECT_NEAR(out[47], 0.75, 1e-15);
}

TEST(ImageIoTest, PgmAndPngRoundTrip) {
    TempDir dir("images");
    const RawImage raw = gray(5, 7, 4);
    save_pgm(dir.path() / "a.pgm", raw);
    const RawImage back = load_image("a.pgm", dir.path());
    EXPECT_EQ(back.height, 5u);
    EXPECT_EQ(back.width, 7u);
    EXPECT_EQ(back.pixels, raw.pixels);

    write_png_gray(dir.path() / "b.png", 3, 4, 200);
    const RawImage png = load_image((dir.path() / "b.png").string(), "/nonexistent");
    EXPECT_EQ(png.height, 3u);
    EXPECT_EQ(png.width, 4u);
    EXPECT_NEAR(png.pixels[5] / png.max_value, 200.0 / 255.0, 1e-12);

    write_text(dir.path() / "c.pgm", "P5\n4 4\n255\nxx");
    EXPECT_THROW(load_image("c.pgm", dir.path()), InputError);
    EXPECT_THROW(load_image("d.bmp", dir.path()), InputError);
}

TEST(NormStatsTest, FileRoundTrip) {
    TempDir dir("stats");
    NormStats stats;
    stats.mean = {0.1, 0.2, 0.30000000000000004};
    stats.std = {1.5, 2.5, 0.7};
    save_norm_stats(dir.path() / "s.json", stats);
    EXPECT_EQ(load_norm_stats(dir.path() / "s.json"), stats);
}

TEST(TokenizeTest, EmptyTextIsBeginThenPad) {
    const Vocabulary vocab;
    const auto ids = tokenize(vocab, "", 4);
    EXPECT_EQ(ids, (std::vector<std::int64_t>{Vocabulary::kBegin, Vocabulary::kPad, Vocabulary::kPad, Vocabulary::kPad}));
}

TEST(TokenizeTest, DeterministicLowercasedPunctuationSplit) {
    const std::vector<std::string> corpus{"Disc bulging at L4-L5."};
    const Vocabulary vocab = Vocabulary::build(corpus);
    const auto a = tokenize(vocab, "Disc bulging at L4-L5", 8);
    EXPECT_EQ(a, tokenize(vocab, "Disc bulging at L4-L5", 8));
    EXPECT_EQ(a, tokenize(vocab, "disc BULGING at l4-l5", 8));
    EXPECT_EQ(a[0], Vocabulary::kBegin);
    EXPECT_NE(a[1], Vocabulary::kUnknown);
    EXPECT_EQ(tokenize(vocab, "osteophyte", 3)[1], Vocabulary::kUnknown);
    std::set<std::int64_t> distinct(a.begin(), a.end());
    EXPECT_GE(distinct.size(), 5u);
}

TEST(TokenizeTest, LongTextIsTruncated) {
    std::string text;
    for (int i = 0; i < 500; ++i) {
        text += "word" + std::to_string(i % 17) + " ";
    }
    EXPECT_EQ(tokenize(Vocabulary(), text, 32).size(), 32u);
}

TEST(VocabularyTest, ReservedIdsAreDenseAndDistinct) {
    const std::vector<std::string> corpus{"a b c", "c d"};
    const Vocabulary vocab = Vocabulary::build(corpus);
    EXPECT_EQ(vocab.size(), 7u);
    std::set<std::int64_t> ids;
    for (const auto& t : vocab.tokens()) {
        ids.insert(vocab.id(t));
    }
    EXPECT_EQ(ids.size(), vocab.size());
    EXPECT_EQ(*ids.rbegin(), static_cast<std::int64_t>(vocab.size()) - 1);
    EXPECT_EQ(Vocabulary::from_tokens(vocab.tokens()).tokens(), vocab.tokens());
}

TEST(EdaTest, GoldenOutputsForSeededSentence) {
    const SynonymTable syn = SynonymTable::builtin();
    const std::string s = "Moderate disc bulging at L4-L5 with narrowing of the left neural foramen.";
    const std::vector<std::pair<std::uint64_t, std::string>> golden{
        {42, "Moderate disc protruding at L4-L5 with stenosis of the left neural foramen."},
        {0, "intermediate disc bulge at L4-L5 with narrowing of the left neural foramen."},
        {1, "Moderate disc at L4-L5 with of the neural foramen."},
        {5, "Moderate disc bulging L4-L5 at with narrowing of the left neural foramen."},
        {6, "Moderate disc bulging at L4-L5 with narrowing the neural foramen."},
    };
    for (const auto& [seed, expected] : golden) {
        EXPECT_EQ(eda_augment(s, seed, syn), expected) << seed;
    }
}

TEST(EdaTest, SingleTokenIsNeverDeleted) {
    const SynonymTable syn = SynonymTable::parse("");
    EdaConfig always;
    always.deletion_prob = 1.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        EXPECT_EQ(eda_augment("stenosis", seed, syn, always), "stenosis");
    }
}

TEST(EdaTest, ZeroRatesAreIdentity) {
    EdaConfig off;
    off.synonym_rate = 0.0;
    off.swap_count = 0;
    off.deletion_prob = 0.0;
    const std::string s = "Moderate disc bulging at L4-L5 with narrowing.";
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        EXPECT_EQ(eda_augment(s, seed, SynonymTable::builtin(), off), s);
    }
    EXPECT_EQ(eda_augment("", 1, SynonymTable::builtin()), "");
}

TEST(EdaTest, NeverEmptyAndSameWordsUnderSwap) {
    const SynonymTable syn = SynonymTable::builtin();
    EdaConfig always;
    always.deletion_prob = 0.9;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const std::string out = eda_augment("disc bulge seen", seed, syn, always);
        EXPECT_FALSE(split_tokens(out).empty());
    }
}

TEST(SynonymTableTest, ParsesGroupsSymmetrically) {
    const SynonymTable t = SynonymTable::parse("# comment\nbulge protrusion\n\nNarrowing stenosis constriction  # trailing\n");
    EXPECT_TRUE(t.contains("bulge"));
    EXPECT_EQ(t.synonyms("protrusion"), (std::vector<std::string>{"bulge"}));
    EXPECT_EQ(t.synonyms("stenosis").size(), 2u);
    EXPECT_FALSE(t.contains("disc"));
}

TEST(SplitTest, ProportionsPerClass) {
    const auto samples = make_samples(80, 20);
    SplitSpec spec;
    spec.seed = 3;
    const auto splits = stratified_split(samples, spec);
    const auto train = class_counts(splits.train);
    EXPECT_NEAR(static_cast<double>(train[kClassLbp]), 56.0, 1.0);
    EXPECT_NEAR(static_cast<double>(train[kClassNoFinding]), 14.0, 1.0);
    for (const auto* part : {&splits.val, &splits.test}) {
        const auto c = class_counts(*part);
        EXPECT_NEAR(static_cast<double>(c[kClassLbp]), 12.0, 1.0);
        EXPECT_NEAR(static_cast<double>(c[kClassNoFinding]), 3.0, 1.0);
    }
}

TEST(SplitTest, PartitionIsDisjointAndExhaustive) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto samples = make_samples(31 + seed, 7 + seed % 5);
        SplitSpec spec;
        spec.seed = seed;
        const auto splits = stratified_split(samples, spec);
        std::set<std::string> ids;
        for (const auto* part : {&splits.train, &splits.val, &splits.test}) {
            for (const auto& s : *part) {
                EXPECT_TRUE(ids.insert(s.id).second) << s.id;
            }
        }
        EXPECT_EQ(ids.size(), samples.size());
        const auto all = class_counts(samples);
        for (std::size_t cls = 0; cls < kNumClasses; ++cls) {
            const double n = static_cast<double>(all[cls]);
            EXPECT_NEAR(static_cast<double>(class_counts(splits.train)[cls]), n * 0.70, 1.0);
            EXPECT_NEAR(static_cast<double>(class_counts(splits.val)[cls]), n * 0.15, 1.0);
            EXPECT_NEAR(static_cast<double>(class_counts(splits.test)[cls]), n * 0.15, 1.0);
        }
    }
}

TEST(SplitTest, SeedFixesAssignment) {
    const auto samples = make_samples(40, 10);
    SplitSpec spec;
    spec.seed = 11;
    const auto a = stratified_split(samples, spec);
    const auto b = stratified_split(samples, spec);
    ASSERT_EQ(a.test.size(), b.test.size());
    for (std::size_t i = 0; i < a.test.size(); ++i) {
        EXPECT_EQ(a.test[i].id, b.test[i].id);
    }
}

TEST(SplitTest, AllTrainAndErrors) {
    const auto samples = make_samples(5, 3);
    SplitSpec spec;
    spec.train_frac = 1.0;
    spec.val_frac = 0.0;
    spec.test_frac = 0.0;
    const auto splits = stratified_split(samples, spec);
    EXPECT_EQ(splits.train.size(), 8u);
    EXPECT_TRUE(splits.val.empty());
    EXPECT_TRUE(splits.test.empty());
    EXPECT_THROW(stratified_split({}, SplitSpec{}), InputError);
    spec.val_frac = 0.1;
    EXPECT_THROW(stratified_split(samples, spec), InputError);
}

TEST(UpsampleTest, EqualizesCounts) {
    const auto out = upsample_minority(make_samples(90, 10), 1);
    const auto counts = class_counts(out);
    EXPECT_EQ(counts[kClassLbp], 90u);
    EXPECT_EQ(counts[kClassNoFinding], 90u);
}

TEST(UpsampleTest, BalancedInputUnchanged) {
    const auto in = make_samples(6, 6);
    const auto out = upsample_minority(in, 1);
    ASSERT_EQ(out.size(), in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        EXPECT_EQ(out[i].id, in[i].id);
    }
}

TEST(UpsampleTest, DuplicateMatchesSeededReplay) {
    const auto in = make_samples(3, 1);
    for (std::uint64_t seed : {0ULL, 9ULL}) {
        auto mixed = make_samples(3, 2);
        mixed.pop_back();
        std::swap(mixed[0], mixed[3]);
        const auto out = upsample_minority(mixed, seed);
        ASSERT_EQ(out.size(), 6u);
        std::vector<std::size_t> minority;
        for (std::size_t i = 0; i < mixed.size(); ++i) {
            if (mixed[i].class_index() == kClassNoFinding) {
                minority.push_back(i);
            }
        }
        Rng replay(derive_seed(seed, {kClassNoFinding, 0x75ULL}));
        for (std::size_t k = 4; k < 6; ++k) {
            EXPECT_EQ(out[k].id, mixed[minority[replay.index(minority.size())]].id);
        }
    }
    EXPECT_THROW(upsample_minority(make_samples(4, 0), 0), InputError);
}

TEST(UpsampleTest, DuplicatesWholeBundles) {
    auto in = make_samples(4, 2);
    in[4].aug_captions = {"a", "b", "c", "d"};
    in[5].aug_captions = {"a", "b", "c", "d"};
    for (const auto& s : upsample_minority(in, 2)) {
        if (s.class_index() == kClassNoFinding) {
            EXPECT_EQ(s.aug_captions.size(), 4u);
        }
    }
}

TEST(PrepareTest, EverySampleHasFourAugmentedCaptions) {
    auto samples = make_samples(30, 8);
    samples[0].aug_captions = {"external paraphrase"};
    PrepareOptions options;
    options.seed = 5;
    const auto splits = prepare_splits(samples, options, SynonymTable::builtin());
    for (const auto* part : {&splits.train, &splits.val, &splits.test}) {
        for (const auto& s : *part) {
            EXPECT_EQ(s.aug_captions.size(), kAugmentedCaptions);
            if (s.id == "s0") {
                EXPECT_EQ(s.aug_captions[0], "external paraphrase");
            }
        }
    }
    const auto counts = class_counts(splits.train);
    EXPECT_EQ(counts[kClassLbp], counts[kClassNoFinding]);
}

TEST(SynthTest, CountsFollowRatio) {
    SynthConfig c;
    c.n_pairs = 10;
    c.class_ratio = 0.8;
    const auto samples = synth_samples(c);
    ASSERT_EQ(samples.size(), 10u);
    const auto counts = class_counts(samples);
    EXPECT_EQ(counts[kClassLbp], 8u);
    EXPECT_EQ(counts[kClassNoFinding], 2u);
    for (const auto& s : samples) {
        EXPECT_EQ(s.aug_captions.size(), kAugmentedCaptions);
        EXPECT_FALSE(s.caption.empty());
    }
}

TEST(SynthTest, InvalidConfigIsRejected) {
    SynthConfig c;
    c.class_ratio = 1.0;
    EXPECT_THROW(c.validate(), InputError);
    c.class_ratio = 0.5;
    c.n_pairs = 1;
    EXPECT_THROW(c.validate(), InputError);
    EXPECT_THROW(parse_synthetic_spec("class=lbp"), InputError);
    EXPECT_THROW(parse_synthetic_spec("class=lbp,seed=1,level=5"), InputError);
    EXPECT_THROW(parse_synthetic_spec("class=cat,seed=1"), InputError);
}

TEST(SynthTest, SpecRoundTrip) {
    SyntheticImageSpec spec{kClassLbp, 99, 32, 3, 1};
    const SyntheticImageSpec back = parse_synthetic_spec(format_synthetic_spec(spec));
    EXPECT_EQ(back.cls, spec.cls);
    EXPECT_EQ(back.seed, spec.seed);
    EXPECT_EQ(back.resolution, spec.resolution);
    EXPECT_EQ(back.level, spec.level);
    EXPECT_EQ(back.side, spec.side);
}

TEST(SynthTest, SameSeedGivesIdenticalManifest) {
    TempDir a("synth_a");
    TempDir b("synth_b");
    SynthConfig c;
    c.n_pairs = 24;
    const auto pa = synth_generate(c, a.path());
    const auto pb = synth_generate(c, b.path());
    std::stringstream sa;
    std::stringstream sb;
    sa << std::ifstream(pa).rdbuf();
    sb << std::ifstream(pb).rdbuf();
    EXPECT_EQ(sa.str(), sb.str());
    EXPECT_FALSE(sa.str().empty());
    c.seed = 8;
    const auto pc = synth_generate(c, b.path() / "other");
    std::stringstream sc;
    sc << std::ifstream(pc).rdbuf();
    EXPECT_NE(sa.str(), sc.str());
}

TEST(SynthTest, ImageFilesMatchInlineSpecs) {
    TempDir dir("synth_files");
    SynthConfig c;
    c.n_pairs = 6;
    c.resolution = 24;
    c.write_image_files = true;
    const auto path = synth_generate(c, dir.path());
    const auto samples = load_manifest(path);
    c.write_image_files = false;
    const auto inline_samples = synth_samples(c);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const RawImage file = load_image(samples[i].image_ref, path.parent_path());
        const RawImage rendered = load_image(inline_samples[i].image_ref, path.parent_path());
        ASSERT_EQ(file.pixels.size(), rendered.pixels.size());
        for (std::size_t k = 0; k < file.pixels.size(); ++k) {
            EXPECT_NEAR(file.pixels[k] / file.max_value, rendered.pixels[k] / rendered.max_value, 1.0 / 255.0);
        }
    }
}

TEST(SynthTest, PixelMeansSeparateClasses) {
    SynthConfig c;
    c.n_pairs = 400;
    c.class_ratio = 0.5;
    c.resolution = 32;
    c.seed = 21;
    const auto samples = synth_samples(c);
    const std::size_t r = c.resolution;

    // Per-column pixel means, standardized on the fit half, then logistic regression by gradient descent.
    std::vector<std::vector<double>> features;
    std::vector<double> targets;
    for (const auto& s : samples) {
        const RawImage raw = load_image(s.image_ref, ".");
        std::vector<double> f(r, 0.0);
        for (std::size_t y = 0; y < r; ++y) {
            for (std::size_t x = 0; x < r; ++x) {
                f[x] += raw.at(0, y, x) / static_cast<double>(r);
            }
        }
        features.push_back(f);
        targets.push_back(s.class_index() == kClassLbp ? 1.0 : 0.0);
    }
    const std::size_t n_fit = 280;
    for (std::size_t k = 0; k < r; ++k) {
        double mean = 0.0;
        double sq = 0.0;
        for (std::size_t i = 0; i < n_fit; ++i) {
            mean += features[i][k] / static_cast<double>(n_fit);
        }
        for (std::size_t i = 0; i < n_fit; ++i) {
            sq += (features[i][k] - mean) * (features[i][k] - mean) / static_cast<double>(n_fit);
        }
        for (auto& f : features) {
            f[k] = (f[k] - mean) / std::sqrt(sq);
        }
    }
    std::vector<double> w(r + 1, 0.0);
    auto logit = [&](const std::vector<double>& f) {
        double z = w[r];
        for (std::size_t k = 0; k < r; ++k) {
            z += w[k] * f[k];
        }
        return z;
    };
    for (int iter = 0; iter < 3000; ++iter) {
        std::vector<double> grad(r + 1, 0.0);
        for (std::size_t i = 0; i < n_fit; ++i) {
            const double err = 1.0 / (1.0 + std::exp(-logit(features[i]))) - targets[i];
            for (std::size_t k = 0; k < r; ++k) {
                grad[k] += err * features[i][k] / static_cast<double>(n_fit);
            }
            grad[r] += err / static_cast<double>(n_fit);
        }
        for (std::size_t k = 0; k <= r; ++k) {
            w[k] -= 0.5 * grad[k];
        }
    }
    std::size_t correct = 0;
    for (std::size_t i = n_fit; i < samples.size(); ++i) {
        correct += ((logit(features[i]) > 0.0) == (targets[i] > 0.5)) ? 1 : 0;
    }
    const double accuracy = static_cast<double>(correct) / static_cast<double>(samples.size() - n_fit);
    EXPECT_GT(accuracy, 0.7) << accuracy;
}
