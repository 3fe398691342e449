// rsopuf: command-line driver for the simulation pipeline
//   gen -> collect -> attack / sweep-keys -> authstats / protocol
//
// Exit codes: 0 ok, 2 usage, 3 I/O or malformed input file, 4 contract
// violation, 5 any other runtime failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "rsopuf/experiments.hpp"

namespace fs = std::filesystem;
namespace ex = rsopuf::experiments;

namespace {

enum Exit { kOk = 0, kUsage = 2, kIo = 3, kContract = 4, kRuntime = 5 };

/// Every flag can also come from RSOPUF_<FLAG>, e.g. RSOPUF_SEED.
template <class T>
CLI::Option* flag(CLI::App* app, const std::string& name, T& target, const std::string& help) {
  std::string env = "RSOPUF_";
  for (char ch : name) env += ch == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return app->add_option("--" + name, target, help)->envname(env)->capture_default_str();
}

void emit(const std::string& out, const std::string& content) {
  if (out.empty() || out == "-") {
    std::cout << content;
  } else {
    rsopuf::write_file_atomic(out, content);
  }
}

std::string read_if_exists(const std::string& path) {
  if (path.empty() || path == "-" || !fs::exists(path)) return {};
  return rsopuf::read_file(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Arbiter PUF / RSO simulation, attacks and authentication statistics"};
  app.require_subcommand(1);

  // gen
  ex::GenConfig gen;
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen", "sample a PUF instance and calibrate its noise");
  flag(gen_cmd, "n", gen.n, "number of stages")->check(CLI::PositiveNumber);
  flag(gen_cmd, "seed", gen.seed, "instance seed");
  flag(gen_cmd, "flip-target", gen.flip_target, "target per-evaluation flip rate (p_intra)")->check(CLI::Range(0.0, 0.4999));
  flag(gen_cmd, "out", gen_out, "instance file")->required();

  // collect
  ex::CollectConfig col;
  std::string col_instance, col_out, col_transcript, col_mode = "raw";
  bool col_noise_free = false;
  auto* col_cmd = app.add_subcommand("collect", "harvest a CRP dataset (raw or RSO-obfuscated)");
  flag(col_cmd, "instance", col_instance, "instance file")->required();
  flag(col_cmd, "count", col.count, "number of CRP records");
  flag(col_cmd, "mode", col_mode, "raw or rso")->check(CLI::IsMember({"raw", "rso"}));
  flag(col_cmd, "m", col.m, "keys in the obfuscation set (rso)");
  flag(col_cmd, "seed", col.seed, "collection seed");
  flag(col_cmd, "epsilon", col.epsilon, "target attack error rate for N_min");
  flag(col_cmd, "tau", col.tau, "fractional match threshold per half");
  flag(col_cmd, "banks", col.banks, "stored key sets (0: as many as needed)");
  col_cmd->add_flag("--noise-free", col_noise_free, "evaluate without noise");
  col_cmd->add_flag("--unique", col.unique_challenges, "no repeated challenges (raw)");
  col_cmd->add_flag("--update", col.updates, "update keys when the CRP counter reaches N_min (rso)");
  flag(col_cmd, "transcript", col_transcript, "also write protocol transcripts (rso)");
  flag(col_cmd, "out", col_out, "dataset file")->required();

  // attack
  ex::AttackConfig att;
  std::string att_dataset, att_instance, att_out, att_method = "lr";
  int att_m = -1;
  auto* att_cmd = app.add_subcommand("attack", "train a modeling attack and append its report row");
  flag(att_cmd, "dataset", att_dataset, "dataset file")->required();
  flag(att_cmd, "method", att_method, "lr, mlp or cmaes")->check(CLI::IsMember({"lr", "mlp", "cmaes"}));
  flag(att_cmd, "seed", att.seed, "split and training seed");
  flag(att_cmd, "test-size", att.test_size, "held-out test CRPs");
  flag(att_cmd, "max-epochs", att.max_epochs, "epoch cap (lr, mlp)");
  flag(att_cmd, "patience", att.patience, "early-stopping patience (lr, mlp)");
  flag(att_cmd, "generations", att.generations, "generation budget (cmaes)");
  flag(att_cmd, "instance", att_instance, "test on fresh noise-free CRPs of this instance (raw data)");
  flag(att_cmd, "m", att_m, "key count recorded in the report (default: from the dataset)");
  flag(att_cmd, "out", att_out, "report CSV (appended)");

  // sweep-keys
  ex::SweepConfig sw;
  std::string sw_instance, sw_out;
  std::vector<std::string> sw_methods{"lr", "mlp", "cmaes"};
  auto* sw_cmd = app.add_subcommand("sweep-keys", "attack accuracy against the number of keys");
  flag(sw_cmd, "instance", sw_instance, "instance file")->required();
  flag(sw_cmd, "m", sw.m_values, "key counts")->delimiter(',');
  flag(sw_cmd, "method", sw_methods, "methods")->delimiter(',')->check(CLI::IsMember({"lr", "mlp", "cmaes"}));
  flag(sw_cmd, "count", sw.count, "CRPs per dataset");
  flag(sw_cmd, "seed", sw.seed, "sweep seed");
  flag(sw_cmd, "generations", sw.generations, "generation budget (cmaes)");
  flag(sw_cmd, "max-epochs", sw.max_epochs, "epoch cap (lr, mlp)");
  flag(sw_cmd, "jobs", sw.jobs, "worker threads across key counts");
  flag(sw_cmd, "out", sw_out, "curve CSV");

  // authstats
  ex::AuthStatsConfig as;
  std::string as_rule = "crossing", as_out;
  auto* as_cmd = app.add_subcommand("authstats", "FAR, FRR and EER for a response length");
  flag(as_cmd, "n", as.n, "response length")->check(CLI::PositiveNumber);
  flag(as_cmd, "p-inter", as.p_inter, "inter-device bit disagreement");
  flag(as_cmd, "p-intra", as.p_intra, "intra-device bit disagreement");
  flag(as_cmd, "rule", as_rule, "crossing or minmax")->check(CLI::IsMember({"crossing", "minmax"}));
  flag(as_cmd, "row", as.row, "row label");
  flag(as_cmd, "out", as_out, "report CSV");

  // protocol
  ex::ProtocolConfig pc;
  std::string pc_instance, pc_out, pc_transcript;
  bool pc_noise_free = false, pc_static = false;
  auto* pc_cmd = app.add_subcommand("protocol", "run an authentication campaign");
  flag(pc_cmd, "instance", pc_instance, "instance file")->required();
  flag(pc_cmd, "m", pc.m, "keys in the obfuscation set");
  flag(pc_cmd, "sessions", pc.sessions, "number of sessions");
  flag(pc_cmd, "banks", pc.banks, "stored key sets (0: as many as needed)");
  flag(pc_cmd, "epsilon", pc.epsilon, "target attack error rate for N_min");
  flag(pc_cmd, "tau", pc.tau, "fractional match threshold per half");
  flag(pc_cmd, "seed", pc.seed, "campaign seed");
  flag(pc_cmd, "enroll-crps", pc.enrollment_crps, "training CRPs for --lr-enroll");
  pc_cmd->add_flag("--noise-free", pc_noise_free, "evaluate without noise");
  pc_cmd->add_flag("--static-keys", pc_static, "never update keys");
  pc_cmd->add_flag("--lr-enroll", pc.lr_enrollment, "enroll an LR-trained model instead of the true delays");
  flag(pc_cmd, "transcript", pc_transcript, "transcript JSON lines");
  flag(pc_cmd, "out", pc_out, "campaign report JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen_cmd) {
      const auto r = ex::cmd_gen(gen);
      emit(gen_out, r.file);
      std::cerr << "noise_sigma=" << rsopuf::format_double(r.instance.noise_sigma())
                << " measured_flip_rate=" << rsopuf::format_double(r.measured_flip_rate) << '\n';
    } else if (*col_cmd) {
      col.mode = ex::parse_collect_mode(col_mode);
      col.noisy = !col_noise_free;
      const auto r = ex::cmd_collect(ex::load_instance(col_instance), col);
      emit(col_out, r.file);
      if (!col_transcript.empty()) {
        std::string lines;
        for (const auto& l : r.transcript_lines) lines += l + '\n';
        emit(col_transcript, lines);
      }
      std::cerr << "records=" << r.dataset.size() << " sessions=" << r.sessions << " updates=" << r.updates << '\n';
    } else if (*att_cmd) {
      att.method = rsopuf::attacks::parse_method(att_method);
      const std::string text = rsopuf::read_file(att_dataset);
      const auto ds = rsopuf::attacks::parse_dataset(text);
      if (att_m >= 0) {
        att.m = static_cast<std::size_t>(att_m);
      } else if (ds.provenance == rsopuf::attacks::Provenance::Rso) {
        const auto cfg = ex::dataset_config(text);
        if (cfg && cfg->is_object() && cfg->contains("m")) att.m = cfg->at("m").get<std::size_t>();
      }
      std::optional<rsopuf::PufInstance> ref;
      if (!att_instance.empty()) ref = ex::load_instance(att_instance);
      const auto r = ex::cmd_attack(ds, att, ref ? &*ref : nullptr);
      auto cfg = ex::to_json(att);
      cfg["dataset"] = att_dataset;
      if (!att_instance.empty()) cfg["instance"] = att_instance;
      if (att_out.empty() || att_out == "-") {
        std::cout << ex::append_report({}, r.report, cfg);
      } else {
        rsopuf::write_file_atomic(att_out, ex::append_report(read_if_exists(att_out), r.report, cfg));
      }
    } else if (*sw_cmd) {
      sw.methods.clear();
      for (const auto& m : sw_methods) sw.methods.push_back(rsopuf::attacks::parse_method(m));
      const auto r = ex::cmd_sweep_keys(ex::load_instance(sw_instance), sw);
      emit(sw_out, r.csv);
    } else if (*as_cmd) {
      as.rule = ex::parse_eer_rule(as_rule);
      const auto r = ex::cmd_authstats(as);
      if (as_out.empty() || as_out == "-") {
        std::cout << r.csv;
      } else {
        rsopuf::write_file_atomic(as_out, r.csv);
        std::cout << rsopuf::to_csv(r.row) << '\n';
      }
    } else if (*pc_cmd) {
      pc.noisy = !pc_noise_free;
      pc.updates = !pc_static;
      const auto r = ex::cmd_protocol(ex::load_instance(pc_instance), pc);
      if (!pc_transcript.empty()) emit(pc_transcript, r.transcript);
      emit(pc_out, r.report_json);
    }
  } catch (const rsopuf::ContractViolation& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kContract;
  } catch (const rsopuf::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const rsopuf::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}
