#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "efficientad/checkpoint.hpp"
#include "efficientad/dataset.hpp"
#include "efficientad/ead1.hpp"
#include "efficientad/error.hpp"
#include "efficientad/image_io.hpp"
#include "efficientad/preprocess.hpp"
#include "test_util.hpp"

#ifndef EAD_TEST_DATA
#define EAD_TEST_DATA "tests/data"
#endif

namespace ead {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

const std::vector<std::uint8_t> kFeatureFixture{
    0x45, 0x41, 0x44, 0x31, 0x01, 0x00, 0x00, 0x00, 0x08, 0x00, 0x00, 0x00, 0x66, 0x65,
    0x61, 0x74, 0x75, 0x72, 0x65, 0x73, 0x01, 0x00, 0x00, 0x00, 0x08, 0x00, 0x00, 0x00,
    0x66, 0x65, 0x61, 0x74, 0x75, 0x72, 0x65, 0x73, 0x03, 0x00, 0x00, 0x00, 0x02, 0x00,
    0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x80, 0x3f,
    0x00, 0x00, 0x20, 0xc0};

Ead1File fixture_file() {
  Ead1File f;
  f.role = "features";
  f.records.push_back({"features", Tensor({2, 1, 1}, std::vector<float>{1.0f, -2.5f})});
  return f;
}

TEST(Ead1, EncodesDocumentedBytes) { EXPECT_EQ(encode_ead1(fixture_file()), kFeatureFixture); }

TEST(Ead1, DecodesFixtureFile) {
  const Tensor t = read_features(std::string(EAD_TEST_DATA) + "/features_2x1x1.ead1", 2, 1);
  EXPECT_EQ(t, fixture_file().records[0].tensor);
  EXPECT_THROW(read_features(std::string(EAD_TEST_DATA) + "/features_2x1x1.ead1"), FormatError);
}

TEST(Ead1, RoundTripIsExact) {
  Rng rng(1);
  Ead1File f;
  f.role = "checkpoint";
  f.records.push_back({"a", testing::random_tensor({3, 4, 5, 2}, rng)});
  f.records.push_back({"b/c", testing::random_tensor({7}, rng)});
  const Ead1File g = decode_ead1(encode_ead1(f));
  EXPECT_EQ(g.role, f.role);
  ASSERT_EQ(g.records.size(), 2u);
  EXPECT_EQ(g.records[0].name, "a");
  EXPECT_EQ(g.records[0].tensor, f.records[0].tensor);
  EXPECT_EQ(g.get("b/c"), f.records[1].tensor);
  EXPECT_EQ(g.find("zz"), nullptr);
  EXPECT_THROW(g.get("zz"), FormatError);
}

TEST(Ead1, RejectsCorruptInput) {
  std::vector<std::uint8_t> bad = kFeatureFixture;
  bad[0] = 'X';
  EXPECT_THROW(decode_ead1(bad), FormatError);
  bad = kFeatureFixture;
  bad[4] = 2;
  EXPECT_THROW(decode_ead1(bad), FormatError);
  for (std::size_t n = 0; n < kFeatureFixture.size(); ++n) {
    std::vector<std::uint8_t> cut(kFeatureFixture.begin(),
                                  kFeatureFixture.begin() + static_cast<std::ptrdiff_t>(n));
    EXPECT_THROW(decode_ead1(cut), FormatError) << "prefix " << n;
  }
  bad = kFeatureFixture;
  bad.push_back(0);
  EXPECT_THROW(decode_ead1(bad), FormatError);
  Ead1File dup = fixture_file();
  dup.records.push_back(dup.records[0]);
  EXPECT_THROW(encode_ead1(dup), FormatError);
}

TEST(Ead1, FeatureFilesCheckRoleAndShape) {
  TempDir dir("features");
  Rng rng(2);
  const Tensor f = testing::random_tensor({384, 64, 64}, rng);
  write_features(dir.str("f.ead1"), f);
  EXPECT_EQ(read_features(dir.str("f.ead1")), f);
  write_features(dir.str("small.ead1"), Tensor({384, 32, 32}));
  EXPECT_THROW(read_features(dir.str("small.ead1")), FormatError);
  Ead1File other = fixture_file();
  other.role = "map";
  write_ead1(dir.str("map.ead1"), other);
  EXPECT_THROW(read_features(dir.str("map.ead1"), 2, 1), FormatError);
  EXPECT_THROW(read_ead1(dir.str("missing.ead1")), IoError);
}

ModelBundle small_bundle(std::uint64_t seed) {
  ModelBundle b;
  b.arch.width_divisor = 16;
  b.arch.padding = false;
  Rng rng(seed);
  b.teacher = make_pdn(b.arch, Role::teacher, rng);
  b.student = make_pdn(b.arch, Role::student, rng);
  b.autoencoder = make_autoencoder(b.arch, rng);
  for (int c = 0; c < b.arch.feature_channels(); ++c) {
    b.teacher_norm.mean.push_back(static_cast<float>(rng.normal()));
    b.teacher_norm.stddev.push_back(static_cast<float>(rng.uniform(0.5, 2.0)));
  }
  b.quantiles = {0.1f, 0.7f, 0.2f, 0.9f};
  return b;
}

void expect_same_network(const Network& a, const Network& b) {
  ASSERT_EQ(a.params.size(), b.params.size());
  for (std::size_t k = 0; k < a.params.size(); ++k) {
    EXPECT_EQ(a.params[k].weight, b.params[k].weight);
    EXPECT_EQ(a.params[k].bias, b.params[k].bias);
  }
  ASSERT_EQ(a.layers.size(), b.layers.size());
}

TEST(Checkpoint, BundleRoundTripIsBitExact) {
  TempDir dir("bundle");
  const ModelBundle b = small_bundle(3);
  save_bundle(b, dir.str("b.ead1"));
  const ModelBundle c = load_bundle(dir.str("b.ead1"));
  EXPECT_EQ(c.arch, b.arch);
  expect_same_network(b.teacher, c.teacher);
  expect_same_network(b.student, c.student);
  expect_same_network(b.autoencoder, c.autoencoder);
  EXPECT_EQ(c.teacher_norm, b.teacher_norm);
  EXPECT_EQ(c.quantiles, b.quantiles);
  // Saving again reproduces the same bytes.
  save_bundle(c, dir.str("c.ead1"));
  std::ifstream x(dir.str("b.ead1"), std::ios::binary), y(dir.str("c.ead1"), std::ios::binary);
  const std::string bx((std::istreambuf_iterator<char>(x)), {});
  const std::string by((std::istreambuf_iterator<char>(y)), {});
  EXPECT_EQ(bx, by);
}

TEST(Checkpoint, TruncatedOrMismatchedFilesFail) {
  TempDir dir("bundle_bad");
  save_bundle(small_bundle(4), dir.str("b.ead1"));
  const auto size = fs::file_size(dir.str("b.ead1"));
  fs::resize_file(dir.str("b.ead1"), size - 3);
  EXPECT_THROW(load_bundle(dir.str("b.ead1")), FormatError);

  Ead1File f = bundle_to_ead1(small_bundle(5));
  for (auto& r : f.records)
    if (r.name == "student/conv1.weight") r.tensor = Tensor({1, 3, 4, 4});
  EXPECT_THROW(bundle_from_ead1(f), FormatError);
  f.role = "features";
  EXPECT_THROW(bundle_from_ead1(f), FormatError);
}

TEST(Checkpoint, TeacherRoundTrip) {
  TempDir dir("teacher");
  const ModelBundle b = small_bundle(6);
  save_teacher(b.teacher, b.arch, dir.str("t.ead1"));
  ArchConfig arch;
  const Network t = load_teacher(dir.str("t.ead1"), &arch);
  EXPECT_EQ(arch, b.arch);
  expect_same_network(b.teacher, t);
  // A full bundle also provides a teacher.
  save_bundle(b, dir.str("b.ead1"));
  expect_same_network(b.teacher, load_teacher(dir.str("b.ead1")));
}

TEST(ImageIo, GrayPngStandardizesToClosedForm) {
  TempDir dir("img");
  // 128/255 in every channel.
  write_png_rgb(dir.str("g.png"), Tensor({3, 256, 256}, 128.0f / 255.0f));
  const Tensor x = load_image(dir.str("g.png"));
  EXPECT_EQ(x.dims(), (std::vector<std::int64_t>{3, 256, 256}));
  EXPECT_NEAR(x.at(0, 10, 10), (128.0 / 255.0 - 0.485) / 0.229, 1e-5);
  EXPECT_NEAR(x.at(2, 200, 3), (128.0 / 255.0 - 0.406) / 0.225, 1e-5);
  write_png_rgb(dir.str("w.png"), Tensor({3, 4, 4}, 1.0f));
  EXPECT_EQ(read_image_rgb(dir.str("w.png")).at(1, 2, 2), 1.0f);
}

TEST(ImageIo, ResizesAndReplicatesGray) {
  TempDir dir("img2");
  Tensor g({1, 30, 40}, 0.25f);
  write_png_gray(dir.str("g.png"), g);
  EXPECT_EQ(read_image_size(dir.str("g.png")), (std::pair<std::int64_t, std::int64_t>{30, 40}));
  const Tensor rgb = load_image_rgb(dir.str("g.png"), 256);
  EXPECT_EQ(rgb.dims(), (std::vector<std::int64_t>{3, 256, 256}));
  EXPECT_NEAR(rgb.at(0, 100, 100), 64.0 / 255.0, 1e-6);
  EXPECT_EQ(rgb.at(0, 5, 7), rgb.at(2, 5, 7));
  std::ofstream(dir.str("junk.png")) << "not a png";
  EXPECT_THROW(read_image_rgb(dir.str("junk.png")), IoError);
}

TEST(ImageIo, MaskAndMap16) {
  TempDir dir("mask");
  Tensor m({1, 5, 6});
  m.at(0, 2, 3) = 1.0f;
  write_png_gray(dir.str("m.png"), m);
  const Tensor back = load_mask(dir.str("m.png"));
  EXPECT_EQ(back, m);
  Tensor map({1, 5, 6});
  for (std::int64_t i = 0; i < map.size(); ++i) map[i] = static_cast<float>(i) * 0.5f - 3.0f;
  const MapEncoding enc = write_png_map16(dir.str("map.png"), map);
  EXPECT_DOUBLE_EQ(enc.offset, -3.0);
  EXPECT_NEAR(enc.scale, 65535.0 / 14.5, 1e-9);
  EXPECT_TRUE(fs::exists(dir.str("map.png.txt")));
  EXPECT_EQ(read_image_size(dir.str("map.png")), (std::pair<std::int64_t, std::int64_t>{5, 6}));
}

void touch_png(const fs::path& p, std::int64_t h = 4, std::int64_t w = 4) {
  fs::create_directories(p.parent_path());
  write_png_rgb(p.string(), Tensor({3, h, w}, 0.5f));
}

TEST(Dataset, IndexesFixtureTree) {
  TempDir dir("ds");
  const fs::path r = dir.path();
  touch_png(r / "train/good/b.png");
  touch_png(r / "train/good/a.png");
  touch_png(r / "test/good/000.png");
  touch_png(r / "test/crack/001.png");
  touch_png(r / "ground_truth/crack/001_mask.png");
  const DatasetIndex idx = index_dataset(r.string());
  EXPECT_EQ(idx.train, (std::vector<std::string>{(r / "train/good/a.png").string(),
                                                 (r / "train/good/b.png").string()}));
  ASSERT_EQ(idx.test.size(), 2u);
  EXPECT_EQ(idx.test[0], (TestEntry{(r / "test/crack/001.png").string(), "crack", true,
                                    (r / "ground_truth/crack/001_mask.png").string()}));
  EXPECT_EQ(idx.test[1], (TestEntry{(r / "test/good/000.png").string(), "good", false, std::nullopt}));
}

TEST(Dataset, Errors) {
  TempDir dir("ds2");
  EXPECT_THROW(index_dataset(dir.str("nope")), IoError);
  EXPECT_THROW(index_dataset(dir.str()), IoError);
  touch_png(dir.path() / "train/good/a.png");
  EXPECT_TRUE(index_dataset(dir.str()).test.empty());
  touch_png(dir.path() / "test/hole/x.png", 4, 4);
  touch_png(dir.path() / "ground_truth/hole/x_mask.png", 5, 4);
  EXPECT_THROW(index_dataset(dir.str()), IoError);
}

TEST(Manifest, RoundTripAndRelativePaths) {
  TempDir dir("manifest");
  const std::vector<ManifestRow> rows{{"img/a.png", "feat/a.ead1", std::nullopt},
                                      {"/abs/b.png", "feat/b.ead1", "feat/b_gray.ead1"}};
  write_manifest(dir.str("m.tsv"), rows, {"projection seed=7"});
  const auto back = read_manifest(dir.str("m.tsv"));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].image, dir.str("img/a.png"));
  EXPECT_EQ(back[1].image, "/abs/b.png");
  EXPECT_EQ(back[1].gray_features, dir.str("feat/b_gray.ead1"));
  std::ofstream(dir.str("bad.tsv")) << "only-one-column\n";
  EXPECT_THROW(read_manifest(dir.str("bad.tsv")), FormatError);
}

}  // namespace
}  // namespace ead
