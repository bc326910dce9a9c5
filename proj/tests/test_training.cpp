#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "testutil.hpp"
#include "waveden/image_io.hpp"
#include "waveden/loss.hpp"
#include "waveden/optim.hpp"
#include "waveden/trainer.hpp"

using namespace waveden;
using testutil::check_gradients;
using testutil::rand_tensor;

namespace {

namespace fs = std::filesystem;

// Writes a small synthetic paired dataset and returns its root.
std::string write_dataset(const std::string& tag, int count, int64_t size, float sigma,
                          uint64_t seed) {
  const fs::path root = fs::temp_directory_path() / ("waveden_" + tag);
  fs::create_directories(root / "noisy");
  fs::create_directories(root / "clean");
  Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    const Image clean = testutil::make_test_image(size, size, rng.split(uint64_t(i)));
    Rng noise = rng.split(1000 + uint64_t(i));
    const ImagePair pair = synthesize_awgn(clean, sigma, noise);
    char name[32];
    std::snprintf(name, sizeof name, "img%03d.png", i);
    write_image((root / "noisy" / name).string(), pair.noisy);  // writer clamps to 8-bit
    write_image((root / "clean" / name).string(), pair.clean);
  }
  return root.string();
}

Settings tiny_settings(const std::string& data_root, uint64_t seed) {
  Settings s;
  s.model.base_channels = 8;
  s.model.stages = 1;
  s.model.window = 2;
  s.model.lf_depth = s.model.hf_depth = 1;
  s.model.mlp_ratio = 2;
  s.model.train_patch = 16;
  s.steps = 50;
  s.batch = 2;
  s.seed = seed;
  s.data_root = data_root;
  s.out_dir = (fs::temp_directory_path() / "waveden_train_out").string();
  return s;
}

}  // namespace

TEST_SUITE_BEGIN("training");

TEST_CASE("charbonnier loss values") {
  Rng rng(61);
  SUBCASE("zero residual leaves eps") {
    Tensor<float> p = rand_tensor<float>({3, 8, 8}, rng, 0, 1);
    Tensor<float> loss = charbonnier_loss(p, p, 1e-3f);
    CHECK(loss.item() == doctest::Approx(1e-3f).epsilon(1e-5));
  }
  SUBCASE("eps 0 reduces to l1 on a scalar") {
    Tensor<float> p = Tensor<float>::scalar(3.0f);
    Tensor<float> g = Tensor<float>::scalar(1.0f);
    CHECK(charbonnier_loss(p, g, 0.0f).item() == doctest::Approx(2.0f));
  }
  SUBCASE("elementwise charbonnier is within eps of l1") {
    const float eps = 1e-3f;
    for (int trial = 0; trial < 100; ++trial) {
      Tensor<float> a = rand_tensor<float>({4, 5}, rng, -1, 1);
      Tensor<float> b = rand_tensor<float>({4, 5}, rng, -1, 1);
      const float ch = charbonnier_loss(a, b, eps).item();
      const float l1 = l1_loss(a, b).item();
      CHECK(ch > l1);
      CHECK(ch - l1 <= eps + 1e-7f);
    }
  }
  SUBCASE("loss exceeds eps whenever pred differs from gt") {
    Tensor<float> a = rand_tensor<float>({10}, rng, -1, 1);
    std::vector<float> shifted(a.data().begin(), a.data().end());
    shifted[3] += 0.25f;
    Tensor<float> b = Tensor<float>::from({10}, std::move(shifted));
    CHECK(charbonnier_loss(a, b, 1e-3f).item() > 1e-3f);
  }
  SUBCASE("global variant takes one root over the summed square") {
    Tensor<float> a = Tensor<float>::from({2}, {1, 2});
    Tensor<float> b = Tensor<float>::from({2}, {0, 0});
    // sqrt(1 + 4 + eps^2)
    CHECK(charbonnier_loss(a, b, 1e-3f, true).item() ==
          doctest::Approx(std::sqrt(5.0f + 1e-6f)));
  }
  SUBCASE("shape mismatch is rejected") {
    CHECK_THROWS_AS(charbonnier_loss(Tensor<float>::zeros({2}), Tensor<float>::zeros({3}), 1e-3f),
                    std::invalid_argument);
  }
  SUBCASE("gradients pass finite differences in both variants") {
    Tensor<double> a = rand_tensor<double>({3, 4}, rng, -1, 1, true);
    Tensor<double> b = rand_tensor<double>({3, 4}, rng, -1, 1, false);
    auto fd = check_gradients({a}, [&] { return charbonnier_loss(a, b, 1e-3); }, Rng(62), 8);
    CHECK(fd.max_rel_err < 1e-4);
    auto fd2 =
        check_gradients({a}, [&] { return charbonnier_loss(a, b, 1e-3, true); }, Rng(63), 8);
    CHECK(fd2.max_rel_err < 1e-4);
  }
}

TEST_CASE("full toy network with charbonnier passes finite differences") {
  ModelConfig cfg;
  cfg.base_channels = 4;
  cfg.stages = 2;
  cfg.window = 2;
  cfg.lf_depth = cfg.hf_depth = 1;
  cfg.mlp_ratio = 2;
  cfg.train_patch = 16;
  Model<double> model(cfg, Rng(64));
  Rng rng(65);
  Tensor<double> x = rand_tensor<double>({3, 16, 16}, rng, 0.0, 1.0, true);
  Tensor<double> target = rand_tensor<double>({3, 16, 16}, rng, 0.0, 1.0, false);
  std::vector<Tensor<double>> leaves = {x};
  model.visit_params([&](const std::string& name, Tensor<double>& t) {
    if (name == "enc.conv_in.w" || name == "wswt.s1.hf0.attn2.wv" || name == "dec.conv_out.w")
      leaves.push_back(t);
  });
  auto fd = check_gradients(leaves, [&] {
    return charbonnier_loss(model.forward(x), target, 1e-3);
  }, Rng(66), 4, 1e-6);
  CHECK(fd.max_rel_err < 1e-4);
}

TEST_CASE("adam") {
  SUBCASE("first step moves a unit-gradient scalar by about the rate") {
    Tensor<float> p = Tensor<float>::scalar(1.0f, true);
    Adam adam({{"p", p}});
    p.mutable_grad()[0] = 1.0f;
    adam.step(0.1);
    CHECK(p.item() == doctest::Approx(0.9f).epsilon(1e-5));
  }
  SUBCASE("zero gradient from a fresh state leaves the parameter untouched") {
    Tensor<float> p = Tensor<float>::scalar(2.0f, true);
    Adam adam({{"p", p}});
    p.mutable_grad()[0] = 0.0f;
    adam.step(0.1);
    CHECK(p.item() == 2.0f);
  }
  SUBCASE("a zero-gradient step decays the moments") {
    Tensor<float> p = Tensor<float>::scalar(2.0f, true);
    Adam adam({{"p", p}});
    p.mutable_grad()[0] = 1.0f;
    adam.step(0.1);
    const float m_before = adam.moment1(0)[0];
    const float v_before = adam.moment2(0)[0];
    p.zero_grad();
    p.mutable_grad()[0] = 0.0f;
    adam.step(0.1);
    CHECK(adam.moment1(0)[0] == doctest::Approx(m_before * 0.9f));
    CHECK(adam.moment2(0)[0] == doctest::Approx(v_before * 0.999f));
  }
  SUBCASE("parameters update independently") {
    Tensor<float> a = Tensor<float>::scalar(1.0f, true);
    Tensor<float> b = Tensor<float>::scalar(1.0f, true);
    Adam adam({{"a", a}, {"b", b}});
    a.mutable_grad()[0] = 1.0f;
    b.mutable_grad()[0] = -2.0f;
    adam.step(0.1);
    CHECK(a.item() < 1.0f);
    CHECK(b.item() > 1.0f);
  }
  SUBCASE("missing gradient is rejected") {
    Tensor<float> p = Tensor<float>::scalar(1.0f, true);
    Adam adam({{"p", p}});
    CHECK_THROWS_AS(adam.step(0.1), std::invalid_argument);
  }
  SUBCASE("first update magnitude is gradient-scale invariant") {
    auto delta = [](float g) {
      Tensor<float> p = Tensor<float>::scalar(1.0f, true);
      Adam adam({{"p", p}});
      p.mutable_grad()[0] = g;
      adam.step(0.1);
      return 1.0f - p.item();
    };
    const float d1 = delta(1.0f), d10 = delta(10.0f);
    CHECK(d1 > 0);
    CHECK(std::abs(d10 / d1 - 1.0f) < 1e-6f);
  }
}

TEST_CASE("gradient clipping caps the global norm") {
  Tensor<float> a = Tensor<float>::from({2}, {1, 1}, true);
  Tensor<float> b = Tensor<float>::from({1}, {1}, true);
  Adam adam({{"a", a}, {"b", b}});
  a.mutable_grad()[0] = 3.0f;
  a.mutable_grad()[1] = 0.0f;
  b.mutable_grad()[0] = 4.0f;
  const double norm = adam.clip_grad_norm(1.0);
  CHECK(norm == doctest::Approx(5.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6f));
  CHECK(b.grad()[0] == doctest::Approx(0.8f));
  // already-small gradients are untouched
  const double norm2 = adam.clip_grad_norm(1.0);
  CHECK(norm2 == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(a.grad()[0] == doctest::Approx(0.6f));
}

TEST_CASE("cosine schedule") {
  const Schedule sched{2e-4, 1e-6, 1000};
  CHECK(cosine_rate(0, sched) == 2e-4);
  CHECK(cosine_rate(1000, sched) == 1e-6);
  CHECK(cosine_rate(500, sched) == doctest::Approx(1.005e-4).epsilon(1e-9));
  CHECK(cosine_rate(2000, sched) == 1e-6);
  double prev = cosine_rate(0, sched);
  for (int64_t s = 1; s <= 1000; ++s) {
    const double r = cosine_rate(s, sched);
    CHECK(r <= prev + 1e-18);
    prev = r;
  }
}

TEST_CASE("dihedral augmentation") {
  SUBCASE("identity draw leaves the pair unchanged") {
    Image img = make_image(4, 4);
    Rng rng(70);
    for (float& v : img.chw) v = float(rng.uniform());
    const Image same = dihedral(img, 0);
    for (size_t i = 0; i < img.chw.size(); ++i) CHECK(same.chw[i] == img.chw[i]);
  }
  SUBCASE("half-turn applied twice is the identity") {
    Image img = make_image(6, 6);
    Rng rng(71);
    for (float& v : img.chw) v = float(rng.uniform());
    const Image twice = dihedral(dihedral(img, 2), 2);
    for (size_t i = 0; i < img.chw.size(); ++i) CHECK(twice.chw[i] == img.chw[i]);
  }
  SUBCASE("the eight transforms of an asymmetric marker are pairwise distinct") {
    Image marker = make_image(2, 2);
    for (int64_t c = 0; c < 3; ++c) {
      marker.at(c, 0, 0) = 0.1f;
      marker.at(c, 0, 1) = 0.2f;
      marker.at(c, 1, 0) = 0.3f;
      marker.at(c, 1, 1) = 0.4f;
    }
    std::vector<Image> orbit;
    for (int t = 0; t < 8; ++t) orbit.push_back(dihedral(marker, t));
    for (int a = 0; a < 8; ++a)
      for (int b = a + 1; b < 8; ++b) {
        bool same = true;
        for (size_t i = 0; i < orbit[size_t(a)].chw.size(); ++i)
          same = same && orbit[size_t(a)].chw[i] == orbit[size_t(b)].chw[i];
        CHECK(!same);
      }
  }
  SUBCASE("the same transform hits both members and preserves the noise field") {
    Rng rng(72);
    const Image clean = testutil::make_test_image(8, 8, rng.split(1));
    Rng noise_rng = rng.split(2);
    ImagePair pair = synthesize_awgn(clean, 25.0f, noise_rng);
    // the known noise field
    std::vector<float> noise(pair.noisy.chw.size());
    for (size_t i = 0; i < noise.size(); ++i) noise[i] = pair.noisy.chw[i] - pair.clean.chw[i];

    Rng aug_rng = rng.split(3);
    ImagePair out = augment_pair(pair, aug_rng);
    // re-derive: transformed noisy minus transformed clean must be a dihedral
    // image of the noise field, hence the same multiset
    std::vector<float> out_noise(out.noisy.chw.size());
    for (size_t i = 0; i < out_noise.size(); ++i)
      out_noise[i] = out.noisy.chw[i] - out.clean.chw[i];
    std::vector<float> a = noise, b = out_noise;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-6));
    // pixel multiset of the clean member is preserved too
    std::vector<float> c0 = pair.clean.chw, c1 = out.clean.chw;
    std::sort(c0.begin(), c0.end());
    std::sort(c1.begin(), c1.end());
    for (size_t i = 0; i < c0.size(); ++i) CHECK(c0[i] == c1[i]);
  }
  SUBCASE("rotation of a non-square patch is rejected") {
    Image img = make_image(2, 4);
    CHECK_THROWS_AS(dihedral(img, 1), std::invalid_argument);
    ImagePair pair;
    pair.noisy = pair.clean = img;
    Rng rng(73);
    CHECK_THROWS_AS(augment_pair(pair, rng), std::invalid_argument);
  }
}

TEST_CASE("trainer") {
  const std::string root = write_dataset("train_basic", 3, 24, 25.0f, 2024);

  SUBCASE("loss on a fixed batch decreases in at least 45 of the first 50 steps") {
    Settings s = tiny_settings(root, 7);
    Trainer trainer(s, nullptr);
    const auto probe = trainer.make_batch(12345);  // fixed batch, off the training path
    float prev = trainer.eval_loss(probe);
    int drops = 0;
    for (int i = 0; i < 50; ++i) {
      trainer.run_steps(1);
      const float cur = trainer.eval_loss(probe);
      if (cur < prev) ++drops;
      prev = cur;
    }
    CHECK(drops >= 45);
  }

  SUBCASE("identical seeds give identical histories") {
    Settings s = tiny_settings(root, 9);
    s.steps = 10;
    Trainer a(s, nullptr), b(s, nullptr);
    a.run_steps(10);
    b.run_steps(10);
    REQUIRE(a.history().size() == b.history().size());
    for (size_t i = 0; i < a.history().size(); ++i) {
      CHECK(a.history()[i].loss == b.history()[i].loss);
      CHECK(a.history()[i].rate == b.history()[i].rate);
    }
  }

  SUBCASE("batches are a pure function of seed and step") {
    Settings s = tiny_settings(root, 11);
    Trainer t(s, nullptr);
    const auto b1 = t.make_batch(17);
    t.run_steps(3);  // advancing the trainer must not change batch derivation
    const auto b2 = t.make_batch(17);
    REQUIRE(b1.size() == b2.size());
    for (size_t i = 0; i < b1.size(); ++i)
      for (size_t j = 0; j < b1[i].noisy.chw.size(); ++j)
        CHECK(b1[i].noisy.chw[j] == b2[i].noisy.chw[j]);
  }

  SUBCASE("zero steps writes a checkpoint equal to the initialization") {
    Settings s = tiny_settings(root, 13);
    s.steps = 0;
    s.out_dir = (fs::temp_directory_path() / "waveden_zero_steps").string();
    fs::create_directories(s.out_dir);
    Trainer t(s, nullptr);
    Model<float> fresh(s.model, Rng(s.seed).split("init"));
    t.run();
    Model<float> loaded = model_from_checkpoint(load_checkpoint(t.final_checkpoint_path()));
    bool equal = true;
    fresh.visit_params([&](const std::string& name, Tensor<float>& p) {
      loaded.visit_params([&](const std::string& name2, Tensor<float>& q) {
        if (name == name2)
          for (int64_t i = 0; i < p.numel(); ++i)
            equal = equal && p.data()[size_t(i)] == q.data()[size_t(i)];
      });
    });
    CHECK(equal);
  }

  SUBCASE("resume reproduces an unresumed run bit for bit") {
    const fs::path dir = fs::temp_directory_path() / "waveden_resume";
    fs::create_directories(dir);
    Settings s = tiny_settings(root, 15);
    s.steps = 12;

    Trainer full(s, nullptr);
    full.run_steps(12);
    full.save((dir / "full.ckpt").string());

    Trainer half(s, nullptr);
    half.run_steps(6);
    half.save((dir / "half.ckpt").string());

    Trainer resumed(s, nullptr);
    resumed.resume((dir / "half.ckpt").string());
    CHECK(resumed.step() == 6);
    resumed.run_steps(6);
    resumed.save((dir / "resumed.ckpt").string());

    auto slurp = [](const fs::path& p) {
      std::ifstream in(p, std::ios::binary);
      return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    CHECK(slurp(dir / "full.ckpt") == slurp(dir / "resumed.ckpt"));
  }

  SUBCASE("periodic validation psnr lands in the step records") {
    Settings s = tiny_settings(root, 19);
    s.steps = 4;
    s.val_root = root;  // reuse the training pairs as a validation set
    s.val_interval = 2;
    Trainer t(s, nullptr);
    t.run_steps(4);
    REQUIRE(t.history().size() == 4);
    CHECK(!t.history()[0].has_val);
    CHECK(t.history()[1].has_val);
    CHECK(!t.history()[2].has_val);
    CHECK(t.history()[3].has_val);
    CHECK(std::isfinite(t.history()[1].val_psnr));
  }

  SUBCASE("non-finite loss aborts with the step reported") {
    Settings s = tiny_settings(root, 17);
    Trainer t(s, nullptr);
    t.model().visit_params([&](const std::string& name, Tensor<float>& p) {
      if (name == "enc.conv_in.w")
        p.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
    });
    CHECK_THROWS_AS(t.run_steps(1), NumericError);
  }
}

TEST_SUITE_END();
