#include <gtest/gtest.h>

#include <complex>
#include <numbers>

#include "pcgscreen/dsp.hpp"
#include "test_util.hpp"

using namespace pcgscreen;

namespace {

const FilterCoefficients& design() {
  static const auto fc = design_butterworth_bandpass(4, 25.0, 400.0, 4000.0);
  return fc;
}

// Amplitude of the `freq` component by least squares over whole cycles at the tail.
double steady_gain_db(double freq) {
  const double fs = 4000.0;
  const auto x = testutil::sine(freq, fs, 160000);
  const auto y = filter_signal(design(), x);
  const std::size_t n = 8000;  // whole number of cycles for 25, 100, 400 and 1000 Hz
  double s = 0, c = 0;
  for (std::size_t i = y.size() - n; i < y.size(); ++i) {
    const double ph = 2.0 * std::numbers::pi * freq * static_cast<double>(i) / fs;
    s += y[i] * std::sin(ph);
    c += y[i] * std::cos(ph);
  }
  const double amp = 2.0 * std::hypot(s, c) / static_cast<double>(n);
  return 20.0 * std::log10(amp);
}

std::vector<double> poly_mul(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  return out;
}

std::vector<std::complex<double>> naive_dft(const std::vector<std::complex<double>>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t t = 0; t < n; ++t)
      out[k] += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t % n) / static_cast<double>(n));
  return out;
}

}  // namespace

TEST(Butterworth, TwoStableSections) {
  const auto& fc = design();
  ASSERT_EQ(fc.sections.size(), 2u);
  for (const auto& s : fc.sections)
    for (const auto& p : s.poles()) EXPECT_LT(std::abs(p), 1.0 - 1e-9);
}

TEST(Butterworth, SineProbeGains) {
  EXPECT_NEAR(steady_gain_db(100.0), 0.0, 0.1);
  EXPECT_NEAR(steady_gain_db(25.0), -3.01, 0.5);
  EXPECT_NEAR(steady_gain_db(400.0), -3.01, 0.5);
  EXPECT_LT(steady_gain_db(1000.0), -20.0);
}

TEST(Butterworth, AnalyticResponseAtEdges) {
  const auto& fc = design();
  EXPECT_NEAR(fc.gain_db_at_hz(25.0), -3.0103, 1e-6);
  EXPECT_NEAR(fc.gain_db_at_hz(400.0), -3.0103, 1e-6);
  EXPECT_NEAR(fc.gain_db_at_hz(std::sqrt(25.0 * 400.0)), 0.0, 0.1);
}

TEST(Butterworth, RejectsDc) {
  const std::vector<double> x(4000, 1.0);
  const auto y = filter_signal(design(), x);
  for (std::size_t i = 3000; i < 4000; ++i) EXPECT_LT(std::abs(y[i]), 1e-6) << i;
}

TEST(Butterworth, ImpulseMatchesTransferFunctionExpansion) {
  const auto& fc = design();
  std::vector<double> b{1.0}, a{1.0};
  for (const auto& s : fc.sections) {
    b = poly_mul(b, {s.b0, s.b1, s.b2});
    a = poly_mul(a, {1.0, s.a1, s.a2});
  }
  const std::size_t n = 4000;
  // Power-series (long division) expansion of B(z)/A(z).
  std::vector<double> h(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double v = i < b.size() ? b[i] : 0.0;
    for (std::size_t k = 1; k < a.size() && k <= i; ++k) v -= a[k] * h[i - k];
    h[i] = v;
  }
  std::vector<double> impulse(n, 0.0);
  impulse[0] = 1.0;
  const auto y = filter_signal(fc, impulse);
  for (std::size_t i = 0; i < n; ++i) ASSERT_NEAR(y[i], h[i], 1e-9) << i;
}

TEST(Butterworth, Linearity) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = testutil::gaussian(rng, 3000), y = testutil::gaussian(rng, 3000);
    const double a = rng.uniform(-3, 3), b = rng.uniform(-3, 3);
    std::vector<double> mix(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) mix[i] = a * x[i] + b * y[i];
    const auto fm = filter_signal(design(), mix), fx = filter_signal(design(), x), fy = filter_signal(design(), y);
    double scale = 0, err = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      scale = std::max(scale, std::abs(fm[i]));
      err = std::max(err, std::abs(fm[i] - (a * fx[i] + b * fy[i])));
    }
    EXPECT_LE(err, 1e-9 * scale);
  }
}

TEST(Butterworth, InvalidBands) {
  const auto code = [](auto f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::EmptySample;
  };
  EXPECT_EQ(code([] { design_butterworth_bandpass(4, 400, 25, 4000); }), Errc::InvalidBand);
  EXPECT_EQ(code([] { design_butterworth_bandpass(4, 100, 100, 4000); }), Errc::InvalidBand);
  EXPECT_EQ(code([] { design_butterworth_bandpass(4, 25, 2000, 4000); }), Errc::InvalidBand);
  EXPECT_EQ(code([] { design_butterworth_bandpass(4, 0, 400, 4000); }), Errc::InvalidBand);
  EXPECT_EQ(code([] { design_butterworth_bandpass(3, 25, 400, 4000); }), Errc::InvalidBand);
  EXPECT_EQ(code([] { filter_signal(design(), std::vector<double>{}); }), Errc::EmptySignal);
}

TEST(Butterworth, HigherOrdersStayBandPass) {
  for (int order : {2, 6, 8}) {
    const auto fc = design_butterworth_bandpass(order, 25.0, 400.0, 4000.0);
    EXPECT_EQ(fc.sections.size(), static_cast<std::size_t>(order / 2));
    EXPECT_NEAR(fc.gain_db_at_hz(25.0), -3.0103, 1e-6);
    EXPECT_NEAR(fc.gain_db_at_hz(400.0), -3.0103, 1e-6);
  }
}

// ---------------------------------------------------------------------------

TEST(ZScore, Examples) {
  const std::vector<double> x{1, 2, 3};
  const auto z = zscore_normalize(x);
  EXPECT_NEAR(z[0], -1.0, 1e-15);
  EXPECT_NEAR(z[1], 0.0, 1e-15);
  EXPECT_NEAR(z[2], 1.0, 1e-15);
}

TEST(ZScore, ErrorsAndIdempotence) {
  EXPECT_THROW(zscore_normalize(std::vector<double>{5, 5, 5, 5}), Error);
  try {
    zscore_normalize(std::vector<double>{5});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::TooShort);
  }
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    auto x = testutil::gaussian(rng, 2 + rng.index(500), rng.uniform(0.01, 100));
    for (auto& v : x) v += 17.0;
    const auto z = zscore_normalize(x);
    EXPECT_NEAR(mean_of(z), 0.0, 1e-9);
    EXPECT_NEAR(sample_stddev(z), 1.0, 1e-9);
    const auto z2 = zscore_normalize(z);
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(z2[i], z[i], 1e-12);
  }
}

// ---------------------------------------------------------------------------

TEST(Fft, MatchesNaiveDft) {
  Rng rng(11);
  for (std::size_t n : {1u, 2u, 8u, 17u, 400u, 1024u}) {
    std::vector<std::complex<double>> x(n);
    for (auto& v : x) v = {rng.normal(), rng.normal()};
    const auto ref = naive_dft(x);
    auto y = x;
    Fft(n).forward(y);
    for (std::size_t k = 0; k < n; ++k) EXPECT_LT(std::abs(y[k] - ref[k]), 1e-9 * std::sqrt(double(n))) << n;
  }
}

TEST(Stft, FrameCountFor15Seconds) {
  const std::vector<double> x(60000, 0.0);
  const auto s = stft(x);
  EXPECT_EQ(s.n_frames(), 299u);
  EXPECT_EQ(s.n_bins(), 513u);
  for (double p : s.power.data()) EXPECT_EQ(p, 0.0);
  EXPECT_DOUBLE_EQ(s.bin_freqs_hz[512], 2000.0);
}

TEST(Stft, FrameCountProperty) {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 400 + rng.index(5000);
    EXPECT_EQ(stft(std::vector<double>(n, 0.1)).n_frames(), (n - 400) / 200 + 1);
  }
  try {
    stft(std::vector<double>(399, 0.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::SignalShorterThanWindow);
  }
}

TEST(Stft, HammingIsSymmetric) {
  const auto w = hamming_window(400);
  EXPECT_DOUBLE_EQ(w[0], 0.08);
  EXPECT_DOUBLE_EQ(w[399], 0.08);
  for (std::size_t i = 0; i < 400; ++i) {
    EXPECT_NEAR(w[i], w[399 - i], 1e-15);
    EXPECT_NEAR(w[i], 0.54 - 0.46 * std::cos(2 * std::numbers::pi * i / 399.0), 1e-15);
  }
}

TEST(Stft, ParsevalPerFrame) {
  Rng rng(9);
  const auto x = testutil::gaussian(rng, 4000);
  const auto s = stft(x);
  const auto w = hamming_window(400);
  for (std::size_t f = 0; f < s.n_frames(); ++f) {
    double energy = 0;
    for (std::size_t i = 0; i < 400; ++i) energy += std::pow(x[f * 200 + i] * w[i], 2);
    const auto p = s.power.row(f);
    double total = p[0] + p[512];
    for (std::size_t k = 1; k < 512; ++k) total += 2.0 * p[k];
    EXPECT_NEAR(total, 1024.0 * energy, 1e-9 * total);
    for (double v : p) EXPECT_GE(v, 0.0);
  }
}
