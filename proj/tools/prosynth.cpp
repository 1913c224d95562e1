// Command-line front end: corpus generation, two-stage training, synthesis,
// evaluation and the ablation grid.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "prosynth/tensor_io.hpp"
#include "prosynth/train.hpp"

namespace fs = std::filesystem;
using namespace ps;

namespace {

void bind_config(CLI::App& app, RunConfig& cfg) {
  app.add_option("--seed", cfg.seed, "master seed");
  app.add_option("--speakers", cfg.n_speakers, "synthetic corpus speakers");
  app.add_option("--utterances", cfg.n_utterances, "synthetic corpus size");
  app.add_option("--sample-rate", cfg.audio.sample_rate);
  app.add_option("--n-fft", cfg.audio.n_fft);
  app.add_option("--hop", cfg.audio.hop);
  app.add_option("--n-mels", cfg.audio.n_mels);
  app.add_option("--mel-fmin", cfg.audio.mel_fmin);
  app.add_option("--mel-fmax", cfg.audio.mel_fmax);
  app.add_option("--min-words", cfg.synth.min_words);
  app.add_option("--max-words", cfg.synth.max_words);
  app.add_option("--min-dur", cfg.synth.min_dur);
  app.add_option("--max-dur", cfg.synth.max_dur);
  app.add_option("--tts-layers", cfg.tts.n_layers);
  app.add_option("--tts-hidden", cfg.tts.hidden);
  app.add_option("--tts-filter", cfg.tts.filter);
  app.add_option("--tts-kernel", cfg.tts.kernel);
  app.add_option("--dropout", cfg.tts.dropout);
  app.add_flag("--no-word-encoder{false}", cfg.tts.use_word_encoder,
               "zero the word-encoder branch");
  app.add_option("--mel-bins", cfg.prosody.n_low_bins,
                 "prosody-encoder input mel bins (N)");
  app.add_option("--prosody-hidden", cfg.prosody.hidden);
  app.add_option("--codebook-size", cfg.codebook_size);
  app.add_option("--codebook-decay", cfg.codebook_decay);
  app.add_option("--vq-beta", cfg.vq_beta);
  app.add_option("--gen-blocks", cfg.latent_gen.blocks);
  app.add_option("--gen-hidden", cfg.latent_gen.hidden);
  app.add_option("--noise-dim", cfg.latent_gen.d_noise);
  app.add_option("--disc-layers", cfg.latent_disc.conv_layers);
  app.add_option("--disc-hidden", cfg.latent_disc.hidden);
  app.add_option("--ar-layers", cfg.ar.layers);
  app.add_option("--ar-hidden", cfg.ar.hidden);
  app.add_option("--timesteps", cfg.timesteps, "few-step diffusion steps (T)");
  app.add_option("--ddpm-timesteps", cfg.ddpm_timesteps);
  app.add_option("--stage1-steps", cfg.stage1_steps);
  app.add_option("--stage2-steps", cfg.stage2_steps);
  app.add_option("--batch", cfg.batch_size);
  app.add_option("--lr1", cfg.lr_stage1);
  app.add_option("--lr2", cfg.lr_stage2);
  app.add_option("--weight-decay", cfg.weight_decay);
  app.add_option("--lambda1", cfg.lambda1, "adversarial weight (stage 1)");
  app.add_option("--lambda2", cfg.lambda2, "adversarial weight (stage 2)");
  app.add_option("--kmeans-fraction", cfg.kmeans_fraction);
  app.add_option("--log-every", cfg.log_every);
  app.add_flag("--full-scale", cfg.full_scale,
               "published step counts and batch size");
  app.add_option("--backend", cfg.backend, "ddgan | ddpm | ar");
  app.add_flag("--no-pcd", cfg.no_pcd, "drop the conditional discriminators");
  app.add_flag("--no-vq", cfg.no_vq, "bypass vector quantization");
  app.add_flag("--detach-prosody-text", cfg.detach_text_for_prosody);
}

int run(int argc, char** argv) {
  CLI::App app{"prosynth: latent-prosody diffusion TTS workbench"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "INI config file (keys match long options)");

  RunConfig cfg;
  bind_config(app, cfg);

  std::string out_dir = "runs/out";
  std::string corpus_manifest, stage1_path, stage2_path, resume_path;
  std::string text = "bama keet", speaker = "spk0";
  std::string pitch_mode = "none";
  std::string axes = "backends,pcd,vq,melbins";
  std::uint64_t action_seed = 0;
  bool self_eval = false, write_wav = false;

  auto* gen = app.add_subcommand("gen-corpus", "write a synthetic corpus");
  gen->add_option("--out", out_dir, "output directory")->required();

  auto* s1 = app.add_subcommand("train-stage1",
                                "joint TTS + prosody encoder + VQ + PCD training");
  s1->add_option("--corpus", corpus_manifest, "manifest path")->required();
  s1->add_option("--out", out_dir)->required();
  s1->add_option("--resume", resume_path, "checkpoint to resume from");

  auto* s2 = app.add_subcommand("train-stage2", "latent prosody generator training");
  s2->add_option("--corpus", corpus_manifest)->required();
  s2->add_option("--stage1", stage1_path, "stage-1 checkpoint")->required();
  s2->add_option("--out", out_dir)->required();

  auto* sy = app.add_subcommand("synth", "synthesize a mel spectrogram");
  sy->add_option("--stage1", stage1_path)->required();
  sy->add_option("--stage2", stage2_path)->required();
  sy->add_option("--text", text);
  sy->add_option("--speaker", speaker);
  sy->add_option("--out", out_dir)->required();
  sy->add_option("--synth-seed", action_seed);
  sy->add_flag("--wav", write_wav, "run the phase-reconstruction fallback vocoder");

  auto* ev = app.add_subcommand("eval", "objective evaluation report");
  ev->add_option("--corpus", corpus_manifest)->required();
  ev->add_option("--stage1", stage1_path);
  ev->add_option("--stage2", stage2_path);
  ev->add_option("--out", out_dir)->required();
  ev->add_flag("--self", self_eval, "score ground truth against itself");
  ev->add_option("--pitch-mode", pitch_mode, "none | audio");
  ev->add_option("--eval-seed", action_seed);

  auto* ab = app.add_subcommand("ablate", "train + evaluate the ablation grid");
  ab->add_option("--corpus", corpus_manifest)->required();
  ab->add_option("--out", out_dir)->required();
  ab->add_option("--axes", axes, "subset of backends,pcd,vq,melbins");

  app.parse(argc, argv);
  cfg.apply_scale();
  cfg.validate();

  if (gen->parsed()) {
    const auto records = generate_synthetic_corpus(
        cfg.seed, cfg.n_speakers, cfg.n_utterances, cfg.audio, cfg.synth);
    const std::string manifest = save_corpus(records, out_dir);
    std::printf("wrote %zu utterances to %s (config %s)\n", records.size(),
                manifest.c_str(), cfg.hash().c_str());
    return 0;
  }

  if (s1->parsed()) {
    auto records = load_manifest(corpus_manifest);
    Stage1Trainer trainer(cfg, std::move(records));
    if (!resume_path.empty()) trainer.restore(Checkpoint::load(resume_path));
    const std::string ckpt = trainer.run(out_dir);
    std::printf("stage-1 checkpoint: %s (config %s)\n", ckpt.c_str(),
                cfg.hash().c_str());
    return 0;
  }

  if (s2->parsed()) {
    auto records = load_manifest(corpus_manifest);
    Stage2Trainer trainer(cfg, std::move(records), Checkpoint::load(stage1_path));
    const std::string ckpt = trainer.run(out_dir);
    std::printf("stage-2 checkpoint: %s (backend %s, config %s)\n", ckpt.c_str(),
                cfg.backend.c_str(), cfg.hash().c_str());
    return 0;
  }

  if (sy->parsed()) {
    SynthesisEngine engine(cfg, Checkpoint::load(stage1_path),
                           Checkpoint::load(stage2_path));
    const std::uint64_t seed = action_seed ? action_seed : cfg.seed;
    VocoderFn vocoder;
    if (write_wav)
      vocoder = [](const MelSpectrogram& mel) { return griffin_lim(mel); };
    const SynthesisResult res = engine.synthesize(text, speaker, seed, vocoder);
    fs::create_directories(out_dir);
    save_tensor((fs::path(out_dir) / "synth_mel.pst").string(), res.mel.data);
    {
      nlohmann::ordered_json meta;
      meta["version"] = kVersionString;
      meta["config_hash"] = cfg.hash();
      meta["text"] = text;
      meta["speaker"] = speaker;
      meta["seed"] = seed;
      meta["prosody_indices"] = res.prosody_indices;
      meta["durations"] = res.durations;
      meta["generator_calls"] = res.generator_calls;
      std::ofstream os(fs::path(out_dir) / "synth_meta.json");
      os << meta.dump(2) << '\n';
    }
    {
      nlohmann::ordered_json timing;
      timing["encode_s"] = res.t_encode;
      timing["prosody_s"] = res.t_prosody;
      timing["vq_s"] = res.t_vq;
      timing["decode_s"] = res.t_decode;
      timing["vocode_s"] = res.t_vocode;
      std::ofstream os(fs::path(out_dir) / "synth_timing.json");
      os << timing.dump(2) << '\n';
    }
    if (write_wav && res.audio.size() > 0)
      save_wav((fs::path(out_dir) / "synth.wav").string(), res.audio,
               cfg.audio.sample_rate);
    std::printf("synthesized %ld frames, %d generator calls -> %s\n",
                static_cast<long>(res.mel.frames()), res.generator_calls,
                out_dir.c_str());
    return 0;
  }

  if (ev->parsed()) {
    auto records = load_manifest(corpus_manifest);
    EvalOptions options;
    options.self_comparison = self_eval;
    options.pitch_mode = pitch_mode;
    options.seed = action_seed ? action_seed : cfg.seed;
    EvalReport report;
    if (self_eval) {
      report = evaluate_self(records, options);
    } else {
      if (stage1_path.empty() || stage2_path.empty())
        throw ArgumentError("eval: --stage1 and --stage2 required unless --self");
      SynthesisEngine engine(cfg, Checkpoint::load(stage1_path),
                             Checkpoint::load(stage2_path));
      report = evaluate(engine, records, options);
    }
    write_eval_artifacts(report, out_dir);
    std::fputs(report.summary.c_str(), stdout);
    return 0;
  }

  if (ab->parsed()) {
    auto records = load_manifest(corpus_manifest);
    run_ablation_grid(cfg, records, out_dir, axes);
    std::printf("ablation artifacts under %s\n", out_dir.c_str());
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return 0;  // --help
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const IntegrityError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const StateError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
