// Copyright 2026 The tastas Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tastas/checkpoint.hpp"

#include <gtest/gtest.h>

#include "test_util.h"

namespace tastas {
namespace {

Model SmallModel() {
  ModelSpec spec = ParseModelSpec("TasTas(I, 1, 2)");
  spec.num_sources = 3;
  spec.dims = {8, 4, 6, 4, 5, 6, 7};
  return InitModel(spec, 5, 99);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const std::string dir = testing::TempDir(::testing::UnitTest::GetInstance()->current_test_info()->name()).string();
  Checkpoint ck;
  ck.model = SmallModel();
  ck.model.idnet->frozen = true;
  ck.model.idnet->trained_by = "idnet";
  ck.meta["completed"] = "idnet";
  const std::string path = dir + "/m.ckpt";
  SaveCheckpoint(path, ck);
  Checkpoint back = LoadCheckpoint(path);
  EXPECT_EQ(back.model.spec.Text(), "TasTas(I, 1, 2)");
  EXPECT_EQ(back.model.spec.num_sources, 3u);
  EXPECT_EQ(back.model.spec.dims.hidden, 5u);
  EXPECT_EQ(back.model.init_seed, 99u);
  EXPECT_EQ(back.meta["completed"], "idnet");
  ASSERT_TRUE(back.model.idnet.has_value());
  EXPECT_TRUE(back.model.idnet->frozen);
  EXPECT_EQ(back.model.idnet->trained_by, "idnet");
  ASSERT_EQ(back.model.stages.size(), 2u);
  auto a = ck.Components(), b = back.Components();
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]->name, b[i]->name);
    EXPECT_EQ(ComponentDigest(*a[i]), ComponentDigest(*b[i]));
    for (size_t p = 0; p < a[i]->params.size(); ++p) EXPECT_EQ(a[i]->params[p].value, b[i]->params[p].value);
  }
  // saving the loaded checkpoint reproduces the file byte for byte
  SaveCheckpoint(dir + "/n.ckpt", back);
  EXPECT_EQ(testing::ReadFile(path), testing::ReadFile(dir + "/n.ckpt"));
}

TEST(Checkpoint, DigestTracksContentOnly) {
  Model m = SmallModel();
  std::string d = ComponentDigest(m.stages[0]);
  EXPECT_EQ(d.size(), 64u);
  m.stages[0].frozen = true;
  m.stages[0].trained_by = "stage1";
  EXPECT_EQ(ComponentDigest(m.stages[0]), d);
  m.stages[0].params[3].value(0, 0) = std::nextafter(m.stages[0].params[3].value(0, 0), 1e9);
  EXPECT_NE(ComponentDigest(m.stages[0]), d);
  EXPECT_NE(ComponentDigest(m.stages[1]), ComponentDigest(*m.idnet));
}

TEST(Checkpoint, KnownSha256Vector) {
  EXPECT_EQ(internal::Sha256Hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const std::string dir = testing::TempDir(::testing::UnitTest::GetInstance()->current_test_info()->name()).string();
  Checkpoint ck;
  ck.model = SmallModel();
  const std::string path = dir + "/m.ckpt";
  SaveCheckpoint(path, ck);
  std::string bytes = testing::ReadFile(path);

  auto write = [&](const std::string &b) {
    std::ofstream(path, std::ios::binary | std::ios::trunc).write(b.data(), std::streamsize(b.size()));
  };
  std::string flipped = bytes;
  flipped[flipped.size() - 3] ^= 0x10;  // inside the last parameter value
  write(flipped);
  EXPECT_THROW(LoadCheckpoint(path), FormatError);
  write(bytes.substr(0, bytes.size() - 8));
  EXPECT_THROW(LoadCheckpoint(path), FormatError);
  std::string badmagic = bytes;
  badmagic[0] = 'X';
  write(badmagic);
  EXPECT_THROW(LoadCheckpoint(path), FormatError);
  std::string badversion = bytes;
  badversion[8] = 7;
  write(badversion);
  EXPECT_THROW(LoadCheckpoint(path), FormatError);
  EXPECT_THROW(LoadCheckpoint(dir + "/absent.ckpt"), MissingFileError);
}

TEST(Checkpoint, LoadedModelSeparatesIdentically) {
  const std::string dir = testing::TempDir(::testing::UnitTest::GetInstance()->current_test_info()->name()).string();
  Checkpoint ck;
  ck.model = SmallModel();
  SaveCheckpoint(dir + "/m.ckpt", ck);
  Model back = LoadCheckpoint(dir + "/m.ckpt").model;
  Waveform mix = testing::Sine(440, 8000, 64, 0.5);
  EXPECT_EQ(Separate(mix, back).stages[1][2].samples, Separate(mix, ck.model).stages[1][2].samples);
}

}  // namespace
}  // namespace tastas
