// Command-line front end: train, denoise, flops, inspect.
//
// Exit codes: 0 success, 2 config/usage error, 3 numeric failure,
// 4 corrupt artifact.

#include <CLI11.hpp>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "waveden/attention.hpp"
#include "waveden/config.hpp"
#include "waveden/image_io.hpp"
#include "waveden/metrics.hpp"
#include "waveden/tiling.hpp"
#include "waveden/trainer.hpp"

namespace {

using namespace waveden;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  int64_t seed = -1;  // <0: keep config value
};

Settings resolve_settings(const CommonArgs& args) {
  ConfigMap cfg;
  if (!args.config_path.empty()) cfg = parse_config_file(args.config_path);
  apply_overrides(cfg, args.overrides);
  Settings s = settings_from(cfg);
  if (args.seed >= 0) s.seed = uint64_t(args.seed);
  return s;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "configuration file (key = value lines)");
  cmd->add_option("--set", args.overrides, "override a config key, e.g. --set steps=100");
  cmd->add_option("--seed", args.seed, "run seed (overrides the config)");
}

int cmd_train(const CommonArgs& common, int64_t steps_override) {
  Settings s = resolve_settings(common);
  if (steps_override >= 0) s.steps = steps_override;
  if (s.data_root.empty()) detail::fail("train: data_root is required");
  std::filesystem::create_directories(s.out_dir);
  std::ofstream log((std::filesystem::path(s.out_dir) / "train.log").string());
  if (!log) detail::fail("train: cannot open metrics log in " + s.out_dir);
  Trainer trainer(s, &log);
  trainer.run();
  std::printf("trained %" PRId64 " steps, checkpoint at %s\n", trainer.step(),
              trainer.final_checkpoint_path().c_str());
  return 0;
}

int cmd_resume(const CommonArgs& common, const std::string& ckpt) {
  Settings s = resolve_settings(common);
  if (s.data_root.empty()) detail::fail("train: data_root is required");
  std::filesystem::create_directories(s.out_dir);
  std::ofstream log((std::filesystem::path(s.out_dir) / "train.log").string(), std::ios::app);
  Trainer trainer(s, &log);
  trainer.resume(ckpt);
  trainer.run();
  std::printf("trained to step %" PRId64 ", checkpoint at %s\n", trainer.step(),
              trainer.final_checkpoint_path().c_str());
  return 0;
}

int cmd_denoise(const std::string& ckpt, const std::string& input, const std::string& output,
                int64_t tile, int64_t overlap, const std::string& reference) {
  Model<float> model = model_from_checkpoint(load_checkpoint(ckpt));
  const int64_t patch = model.config().train_patch;
  if (tile > 0 && tile != patch)
    detail::fail("denoise: tile must equal the training patch size " + std::to_string(patch) +
                 " (positional embeddings fix the network input size)");
  const Image noisy = read_image(input);
  const Image out = clamp_image(denoise_tiled(model, noisy, overlap));
  write_image(output, out);
  std::printf("wrote %s (%" PRId64 "x%" PRId64 ")\n", output.c_str(), out.width, out.height);
  if (!reference.empty()) {
    const Image ref = read_image(reference);
    std::printf("psnr vs reference: %.4f dB\n", psnr(out, ref));
    std::printf("ssim vs reference: %.6f\n", ssim(out, ref));
    std::printf("noisy-input psnr: %.4f dB\n", psnr(noisy, ref));
  }
  return 0;
}

int cmd_flops(int64_t h, int64_t w, int64_t c, int64_t m) {
  detail::check(h > 0 && w > 0 && c > 0 && m > 0, "flops: arguments must be positive");
  detail::check(h % m == 0 && w % m == 0, "flops: H and W must be multiples of M");
  const uint64_t msa = flops_msa(uint64_t(h), uint64_t(w), uint64_t(c));
  const uint64_t win = flops_wsa(uint64_t(h), uint64_t(w), uint64_t(c), uint64_t(m));

  // Dry forward of one attention unit with the multiply-accumulate counter.
  AttentionConfig cfg{m, 1, c, 0};
  AttentionWeights<float> weights = AttentionWeights<float>::create(c, 1, m, Rng(1));
  Tensor<float> x = Tensor<float>::zeros({c, h, w});
  {
    Rng rng(2);
    for (float& v : x.mutable_data()) v = float(rng.uniform(-1.0, 1.0));
  }
  NoGradGuard no_grad;
  reset_matmul_mac_count();
  wsa(x, cfg, weights);
  const uint64_t measured = matmul_mac_count();

  std::printf("msa  macs: %" PRIu64 "\n", msa);
  std::printf("wsa  macs: %" PRIu64 "\n", win);
  std::printf("ratio    : %.4f\n", double(msa) / double(win));
  std::printf("measured : %" PRIu64 " (%s)\n", measured, measured == win ? "MATCH" : "MISMATCH");
  return measured == win ? 0 : 3;
}

int cmd_inspect(const std::string& ckpt) {
  const auto entries = load_checkpoint(ckpt);
  int64_t params = 0;
  std::printf("%-44s %s\n", "name", "shape");
  for (const auto& e : entries) {
    std::printf("%-44s %s\n", e.name.c_str(), detail::shape_str(e.shape).c_str());
    if (e.name.rfind("param/", 0) == 0) params += int64_t(e.data.size());
  }
  std::printf("parameters: %" PRId64 "\n", params);
  std::printf("config:\n");
  for (const auto& e : entries)
    if (e.name.rfind("config/", 0) == 0)
      std::printf("  %s = %g\n", e.name.c_str() + 7, double(e.data.at(0)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wavelet sliding-window transformer denoiser"};
  app.require_subcommand(1);

  CommonArgs train_args;
  int64_t train_steps = -1;
  std::string resume_ckpt;
  CLI::App* train = app.add_subcommand("train", "train a model on a paired-image folder");
  add_common(train, train_args);
  train->add_option("--steps", train_steps, "override the configured step count");
  train->add_option("--resume", resume_ckpt, "resume from a checkpoint");

  std::string dn_ckpt, dn_in, dn_out, dn_ref;
  int64_t dn_tile = 0, dn_overlap = 16;
  CLI::App* denoise = app.add_subcommand("denoise", "denoise an image with a trained checkpoint");
  denoise->add_option("checkpoint", dn_ckpt)->required();
  denoise->add_option("input", dn_in)->required();
  denoise->add_option("output", dn_out)->required();
  denoise->add_option("--tile", dn_tile, "tile size (must equal the training patch)");
  denoise->add_option("--overlap", dn_overlap, "tile overlap in pixels");
  denoise->add_option("--reference", dn_ref, "clean image for PSNR/SSIM reporting");

  int64_t f_h = 0, f_w = 0, f_c = 0, f_m = 0;
  CLI::App* flops = app.add_subcommand("flops", "attention cost report");
  flops->add_option("H", f_h)->required();
  flops->add_option("W", f_w)->required();
  flops->add_option("C", f_c)->required();
  flops->add_option("M", f_m)->required();

  std::string in_ckpt;
  CLI::App* inspect = app.add_subcommand("inspect", "print a checkpoint manifest");
  inspect->add_option("checkpoint", in_ckpt)->required();

  try {
    app.parse(argc, argv);
    if (train->parsed())
      return resume_ckpt.empty() ? cmd_train(train_args, train_steps)
                                 : cmd_resume(train_args, resume_ckpt);
    if (denoise->parsed()) return cmd_denoise(dn_ckpt, dn_in, dn_out, dn_tile, dn_overlap, dn_ref);
    if (flops->parsed()) return cmd_flops(f_h, f_w, f_c, f_m);
    if (inspect->parsed()) return cmd_inspect(in_ckpt);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const waveden::CheckpointError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const waveden::NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
