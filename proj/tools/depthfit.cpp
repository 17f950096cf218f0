#include <iostream>

#include <CLI11.hpp>

#include "depthfit/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"depthfit: self-supervised monocular depth on synthetic scenes"};
  app.require_subcommand(1);

  depthfit::cli::SynthOptions synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic triplet dataset");
  synth_cmd->add_option("--out", synth.out_dir, "output dataset directory")->required();
  synth_cmd->add_option("--count", synth.count, "number of training triplets");
  synth_cmd->add_option("--val-count", synth.val_count, "number of held-out triplets");
  synth_cmd->add_option("--seed", synth.seed, "generation seed");
  synth_cmd->add_option("--resolution", synth.resolution, "square frame size (multiple of 16)");
  synth_cmd->add_option("--hires-factor", synth.hires_factor, "resolution multiplier for phase-2 frames");

  depthfit::cli::TrainOptions train;
  CLI::App* train_cmd = app.add_subcommand("train", "run the two-phase training loop");
  train_cmd->add_option("--config", train.config_path, "training config JSON (defaults used when omitted)");
  train_cmd->add_option("--data", train.data_dir, "dataset directory")->required();
  train_cmd->add_option("--out", train.out_dir, "output directory for checkpoints and logs")->required();
  train_cmd->add_option("--resume", train.resume_path, "checkpoint to resume from");
  train_cmd->add_option("--set", train.overrides, "flat config overrides, e.g. --set loss.alpha_a=0");

  depthfit::cli::EvalOptions eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint against ground truth");
  eval_cmd->add_option("--ckpt", eval.ckpt_path, "checkpoint path");
  eval_cmd->add_option("--data", eval.data_dir, "dataset directory")->required();
  eval_cmd->add_option("--split", eval.split, "val | train | all");
  eval_cmd->add_flag("--median-scale,!--no-median-scale", eval.median_scaling, "median scaling (default on)");
  eval_cmd->add_option("--cap", eval.cap, "depth cap (default 80)");
  eval_cmd->add_flag("--self-check", eval.self_check, "run the ground-truth warp self-consistency check");
  eval_cmd->add_flag("--eigen-crop", eval.eigen_crop, "accepted and ignored (no crop region in synthetic data)");
  eval_cmd->add_option("--resolution", eval.resolution, "auto | base | hires");

  depthfit::cli::InferOptions infer;
  CLI::App* infer_cmd = app.add_subcommand("infer", "predict depth for a single image");
  infer_cmd->add_option("--ckpt", infer.ckpt_path, "checkpoint path")->required();
  infer_cmd->add_option("--image", infer.image_path, "input PPM image")->required();
  infer_cmd->add_option("--out", infer.out_dir, "output directory")->required();

  depthfit::cli::GradcheckOptions gc;
  CLI::App* gc_cmd = app.add_subcommand("gradcheck", "finite-difference checks for every differentiable op");
  gc_cmd->add_option("--filter", gc.filter, "only run checks whose name contains this substring");

  CLI11_PARSE(app, argc, argv);

  if (synth_cmd->parsed()) return depthfit::cli::run_synth(synth, std::cout, std::cerr);
  if (train_cmd->parsed()) return depthfit::cli::run_train(train, std::cout, std::cerr);
  if (eval_cmd->parsed()) return depthfit::cli::run_eval(eval, std::cout, std::cerr);
  if (infer_cmd->parsed()) return depthfit::cli::run_infer(infer, std::cout, std::cerr);
  if (gc_cmd->parsed()) return depthfit::cli::run_gradcheck(gc, std::cout, std::cerr);
  return depthfit::cli::kValidationError;
}
