#include <gtest/gtest.h>

#include <set>

#include "pcgscreen/audio_io.hpp"
#include "test_util.hpp"

using namespace pcgscreen;

namespace {

// Builds a WAV image with an arbitrary fmt block.
std::string make_wav(std::uint16_t format, std::uint16_t channels, std::uint32_t rate, std::uint16_t bits,
                     const std::string& data) {
  std::string out = "RIFF";
  le::put_u32(out, static_cast<std::uint32_t>(36 + data.size()));
  out += "WAVEfmt ";
  le::put_u32(out, 16);
  le::put_u16(out, format);
  le::put_u16(out, channels);
  le::put_u32(out, rate);
  le::put_u32(out, rate * channels * bits / 8);
  le::put_u16(out, static_cast<std::uint16_t>(channels * bits / 8));
  le::put_u16(out, bits);
  out += "data";
  le::put_u32(out, static_cast<std::uint32_t>(data.size()));
  return out + data;
}

std::string pcm16(std::initializer_list<std::int16_t> v) {
  std::string s;
  for (auto x : v) le::put_u16(s, static_cast<std::uint16_t>(x));
  return s;
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return Errc::InvalidArgument;
}

PatientManifest dummy_manifest(std::size_t n, std::size_t n_chd) {
  PatientManifest m;
  for (std::size_t i = 0; i < n; ++i) {
    PatientEntry e;
    e.patient_id = "D" + std::to_string(i);
    e.label = i < n_chd ? Label::CHD : Label::NonCHD;
    e.recordings[Site::AV] = "/data/" + e.patient_id + ".wav";
    m.entries.push_back(e);
  }
  return m;
}

}  // namespace

TEST(Wav, Pcm16HalfScaleIsExactlyHalf) {
  const auto rec = decode_wav(make_wav(1, 1, 4000, 16, pcm16({16384, -16384, 0, -32768})));
  ASSERT_EQ(rec.samples.size(), 4u);
  EXPECT_EQ(rec.samples[0], 0.5);
  EXPECT_EQ(rec.samples[1], -0.5);
  EXPECT_EQ(rec.samples[2], 0.0);
  EXPECT_EQ(rec.samples[3], -1.0);
  EXPECT_EQ(rec.sample_rate_hz, 4000);
}

TEST(Wav, WriteQuantizesAndSaturates) {
  EXPECT_EQ(quantize_pcm16(0.5), 16384);
  EXPECT_EQ(quantize_pcm16(1.0), 32767);
  EXPECT_EQ(quantize_pcm16(-1.0), -32768);
  EXPECT_EQ(quantize_pcm16(-1.5), -32768);
  Recording r;
  r.samples = {0.5, 1.0};
  const auto bytes = encode_wav(r);
  ASSERT_EQ(bytes.size(), 48u);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  EXPECT_EQ(static_cast<std::int16_t>(le::get_u16(p + 44)), 16384);
  EXPECT_EQ(static_cast<std::int16_t>(le::get_u16(p + 46)), 32767);
}

TEST(Wav, EmptyRecordingHasZeroLengthDataChunk) {
  Recording r;
  const auto bytes = encode_wav(r);
  EXPECT_EQ(bytes.size(), 44u);
  EXPECT_EQ(le::get_u32(reinterpret_cast<const unsigned char*>(bytes.data()) + 40), 0u);
  EXPECT_TRUE(decode_wav(bytes).samples.empty());
}

TEST(Wav, RoundTripIsBitIdenticalForAllInt16Values) {
  testutil::TempDir dir("wav");
  Recording r;
  for (int v = -32768; v <= 32767; ++v) r.samples.push_back(v / 32768.0);
  write_wav(r, dir.path() / "a.wav");
  const auto a = read_wav(dir.path() / "a.wav");
  write_wav(a, dir.path() / "b.wav");
  const auto b = read_wav(dir.path() / "b.wav");
  EXPECT_EQ(a.samples, r.samples);
  EXPECT_EQ(b.samples, a.samples);
  EXPECT_EQ(detail::read_file_bytes(dir.path() / "a.wav"), detail::read_file_bytes(dir.path() / "b.wav"));
}

TEST(Wav, StereoIsRejected) {
  EXPECT_EQ(code_of([] { decode_wav(make_wav(1, 2, 4000, 16, pcm16({1, 2, 3, 4}))); }), Errc::NotMono);
}

TEST(Wav, OtherEncodings) {
  // 32-bit float
  std::string f;
  le::put_f32(f, 0.25f);
  le::put_f32(f, -2.0f);  // clamped
  auto rec = decode_wav(make_wav(3, 1, 4000, 32, f));
  EXPECT_EQ(rec.samples, (std::vector<double>{0.25, -1.0}));
  // 24-bit PCM: 0x400000 = 2^22 -> 0.5
  const std::string s24 = {'\x00', '\x00', '\x40', '\x00', '\x00', '\xC0'};
  rec = decode_wav(make_wav(1, 1, 4000, 24, s24));
  EXPECT_EQ(rec.samples, (std::vector<double>{0.5, -0.5}));
  // 8-bit unsigned
  rec = decode_wav(make_wav(1, 1, 4000, 8, std::string{'\x80', '\xC0'}));
  EXPECT_EQ(rec.samples, (std::vector<double>{0.0, 0.5}));
  // A-law is not supported
  EXPECT_EQ(code_of([] { decode_wav(make_wav(6, 1, 4000, 8, "ab")); }), Errc::UnsupportedEncoding);
}

TEST(Wav, SampleRateMismatchAndResampling) {
  const auto img = make_wav(1, 1, 8000, 16, pcm16({0, 8192, 16384, 8192}));
  EXPECT_EQ(code_of([&] { decode_wav(img); }), Errc::SampleRateMismatch);
  const auto rec = decode_wav(img, {4000, true});
  EXPECT_EQ(rec.sample_rate_hz, 4000);
  EXPECT_EQ(rec.samples, (std::vector<double>{0.0, 0.5}));
  EXPECT_EQ(decode_wav(img, {0, false}).sample_rate_hz, 8000);
}

TEST(Wav, CorruptHeaders) {
  EXPECT_EQ(code_of([] { decode_wav("RIFX0000WAVE"); }), Errc::CorruptHeader);
  auto img = make_wav(1, 1, 4000, 16, pcm16({1, 2}));
  img.resize(img.size() - 2);  // data chunk overruns
  EXPECT_EQ(code_of([&] { decode_wav(img); }), Errc::CorruptHeader);
  std::string no_data = make_wav(1, 1, 4000, 16, "");
  no_data.resize(36);
  EXPECT_EQ(code_of([&] { decode_wav(no_data); }), Errc::CorruptHeader);
}

TEST(Wav, SkipsUnknownChunks) {
  auto img = make_wav(1, 1, 4000, 16, pcm16({16384}));
  std::string list = "LIST";
  le::put_u32(list, 3);
  list += "abc";
  list += '\0';  // pad byte
  img.insert(36, list);
  EXPECT_EQ(decode_wav(img).samples, std::vector<double>{0.5});
}

TEST(Wav, MissingFileIsIoFailure) {
  EXPECT_EQ(code_of([] { read_wav("/nonexistent/x.wav"); }), Errc::IoFailure);
}

// ---------------------------------------------------------------------------

TEST(Manifest, GroupsRowsByPatient) {
  const auto m = parse_manifest(
      "patient_id,age_months,sex,label,site,path\n"
      "# comment line\n"
      "P001,30,M,chd,AV,a.wav\n"
      "P001,30,M,CHD,PV,b.wav\n"
      "P001,30,M,Chd,TV,c.wav\n"
      "P001,30,M,CHD,MV,d.wav\n"
      "P002,7,f,non-chd,MV,/abs/e.wav\n",
      "/base");
  ASSERT_EQ(m.entries.size(), 2u);
  EXPECT_EQ(m.entries[0].recordings.size(), 4u);
  EXPECT_EQ(m.entries[0].label, Label::CHD);
  EXPECT_EQ(m.entries[0].age_months, 30);
  EXPECT_EQ(m.entries[0].recordings.at(Site::PV), std::filesystem::path("/base/b.wav"));
  EXPECT_EQ(m.entries[1].label, Label::NonCHD);
  EXPECT_EQ(m.entries[1].sex, Sex::F);
  EXPECT_EQ(m.entries[1].recordings.at(Site::MV), std::filesystem::path("/abs/e.wav"));
}

TEST(Manifest, ColumnsMayBeReordered) {
  const auto m = parse_manifest("path,site,label,sex,age_months,patient_id\nx.wav,av,NonCHD,U,12,Q\n", "/b");
  ASSERT_EQ(m.entries.size(), 1u);
  EXPECT_EQ(m.entries[0].patient_id, "Q");
  EXPECT_EQ(m.entries[0].sex, Sex::Unknown);
}

TEST(Manifest, Errors) {
  const std::string h = "patient_id,age_months,sex,label,site,path\n";
  EXPECT_EQ(code_of([&] { parse_manifest(h + "P1,1,M,CHD,AV,a\nP1,1,M,CHD,AV,b\n", "/"); }),
            Errc::DuplicateSiteForPatient);
  EXPECT_EQ(code_of([&] { parse_manifest(h + "P1,1,M,sick,AV,a\n", "/"); }), Errc::UnknownLabel);
  EXPECT_EQ(code_of([&] { parse_manifest(h + "P1,1,M,CHD,XX,a\n", "/"); }), Errc::UnknownSite);
  EXPECT_EQ(code_of([&] { parse_manifest("patient_id,sex,label,site,path\n", "/"); }), Errc::MissingColumn);
  EXPECT_EQ(code_of([&] { parse_manifest(h + "P1,1,M,CHD,AV,a\nP2,1,M,CHD,AV,a\n", "/"); }), Errc::DuplicatePath);
  EXPECT_EQ(code_of([&] { parse_manifest(h + "P1,1,M,CHD,AV,a\nP1,1,M,NonCHD,PV,b\n", "/"); }),
            Errc::InconsistentPatient);
}

TEST(Manifest, SaveLoadRoundTrip) {
  testutil::TempDir dir("manifest");
  const auto text =
      "patient_id,age_months,sex,label,site,path\nP1,3,M,CHD,AV,w/a.wav\nP1,3,M,CHD,MV,w/b.wav\n"
      "P2,40,F,NonCHD,TV,w/c.wav\n";
  detail::write_file_bytes(dir.path() / "m.csv", text);
  const auto m = load_manifest(dir.path() / "m.csv");
  save_manifest(m, dir.path() / "m2.csv");
  EXPECT_EQ(detail::read_file_bytes(dir.path() / "m2.csv"), text);
  const auto m2 = load_manifest(dir.path() / "m2.csv");
  ASSERT_EQ(m2.entries.size(), 2u);
  EXPECT_EQ(m2.entries[0].recordings, m.entries[0].recordings);
}

// ---------------------------------------------------------------------------

TEST(Split, TableFourCounts) {
  const auto m = dummy_manifest(751, 473);
  const auto s = split_patients(m, {0.7, 0.2, 0.1}, 42);
  EXPECT_EQ(s.train.size(), 526u);
  EXPECT_EQ(s.validation.size(), 150u);
  EXPECT_EQ(s.test.size(), 75u);
}

TEST(Split, TenPatients) {
  const auto s = split_patients(dummy_manifest(10, 6), {0.7, 0.2, 0.1}, 1);
  EXPECT_EQ(s.train.size(), 7u);
  EXPECT_EQ(s.validation.size(), 2u);
  EXPECT_EQ(s.test.size(), 1u);
}

TEST(Split, DeterministicPerSeed) {
  const auto m = dummy_manifest(57, 30);
  EXPECT_EQ(split_patients(m, {0.7, 0.2, 0.1}, 9), split_patients(m, {0.7, 0.2, 0.1}, 9));
  EXPECT_NE(split_patients(m, {0.7, 0.2, 0.1}, 9), split_patients(m, {0.7, 0.2, 0.1}, 10));
}

TEST(Split, PartitionAndStratificationProperties) {
  Rng rng(123);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.index(120);
    const std::size_t n_chd = rng.index(n + 1);
    double a = rng.uniform(0.05, 1), b = rng.uniform(0.05, 1), c = rng.uniform(0.05, 1);
    const double t = a + b + c;
    std::array<double, 3> r{a / t, b / t, 1.0 - a / t - b / t};
    const auto m = dummy_manifest(n, n_chd);
    const auto s = split_patients(m, r, rng.next_u64());

    std::set<std::string> all;
    for (const auto* v : {&s.train, &s.validation, &s.test})
      for (const auto& id : *v) EXPECT_TRUE(all.insert(id).second) << "overlap " << id;
    EXPECT_EQ(all.size(), n);

    // Global sizes follow largest-remainder; per-label shares stay within one patient.
    const auto sizes = largest_remainder(n, r);
    EXPECT_EQ(s.train.size(), sizes[0]);
    EXPECT_EQ(s.validation.size(), sizes[1]);
    EXPECT_EQ(s.test.size(), sizes[2]);
    const std::array<const std::vector<std::string>*, 3> sets{&s.train, &s.validation, &s.test};
    for (int lab = 0; lab < 2; ++lab) {
      const double n_l = lab == 0 ? static_cast<double>(n_chd) : static_cast<double>(n - n_chd);
      for (std::size_t k = 0; k < 3; ++k) {
        double cnt = 0;
        for (const auto& id : *sets[k]) cnt += (m.find(id)->label == Label::CHD) == (lab == 0);
        EXPECT_LE(std::abs(cnt - n_l * r[k]), 1.0 + 1e-9) << "n=" << n << " label=" << lab << " split=" << k;
      }
    }
  }
}

TEST(Split, Errors) {
  EXPECT_EQ(code_of([] { split_patients({}, {0.7, 0.2, 0.1}, 1); }), Errc::EmptyManifest);
  EXPECT_EQ(code_of([] { split_patients(dummy_manifest(5, 2), {0.7, 0.2, 0.2}, 1); }), Errc::RatioSumInvalid);
  EXPECT_EQ(code_of([] { split_patients(dummy_manifest(5, 2), {1.0, 0.0, 0.0}, 1); }), Errc::RatioSumInvalid);
}

TEST(Split, JsonRoundTrip) {
  const auto s = split_patients(dummy_manifest(20, 8), {0.7, 0.2, 0.1}, 5);
  const auto j = to_json(s);
  EXPECT_TRUE(j.contains("seed") && j.contains("ratios") && j.contains("train") && j.contains("validation") &&
              j.contains("test"));
  EXPECT_EQ(split_from_json(nlohmann::json::parse(j.dump())), s);
}
