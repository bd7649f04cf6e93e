// Stand-in for a real fine-tuning job. Reads the sft_bridge manifest,
// "trains" a fixed uniform toy model over a 1024-token vocabulary and writes
// a report whose loss is the mean reference_sft_loss of the dataset.

#include "constalign/sft_bridge.hpp"
#include "constalign/util.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <iostream>

using json = nlohmann::json;
namespace fs = std::filesystem;
namespace sft = constalign::sft;

int main(int argc, char** argv) {
  CLI::App app{"mock trainer for the sft_bridge process contract"};
  std::string manifest_path;
  std::string fail_mode = "none";
  app.add_option("manifest", manifest_path, "Trainer manifest (JSON)")->required();
  app.add_option("--fail", fail_mode, "none, exit, report or garbage")
      ->check(CLI::IsMember({"none", "exit", "report", "garbage"}));
  CLI11_PARSE(app, argc, argv);

  try {
    const json manifest = json::parse(constalign::read_text_file(manifest_path));
    const fs::path report_path = manifest.at("report_path").get<std::string>();

    if (fail_mode == "exit") {
      std::cerr << "mock trainer: simulated crash\n";
      return 3;
    }
    if (fail_mode == "garbage") {
      constalign::write_text_file_atomic(report_path, "{not json");
      return 0;
    }
    if (fail_mode == "report") {
      constalign::write_text_file_atomic(report_path,
                                         json{{"status", "failed"}, {"error", "simulated divergence"}}.dump(2));
      return 0;
    }

    const fs::path dataset = manifest.at("dataset_path").get<std::string>();
    std::vector<sft::SftExample> examples;
    if (fs::exists(dataset)) examples = sft::read_sft_dataset(dataset);

    json report;
    if (examples.empty()) {
      report = {{"status", "skipped"}, {"examples_seen", 0}, {"final_loss", nullptr}, {"output_model_ref", nullptr}};
    } else {
      const double token_logprob = -std::log(1024.0);
      double total = 0.0;
      for (const auto& ex : examples) {
        const std::vector<double> logprobs(constalign::split_whitespace(ex.response).size(), token_logprob);
        total += sft::reference_sft_loss(logprobs);
      }
      const int epochs = manifest.at("hyperparams").value("epochs", 1);
      report = {{"status", "succeeded"},
                {"examples_seen", examples.size() * static_cast<std::size_t>(epochs)},
                {"final_loss", total / static_cast<double>(examples.size())},
                {"output_model_ref", manifest.at("output_model_ref")}};
    }
    constalign::write_text_file_atomic(report_path, report.dump(2));
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "mock trainer: " << e.what() << "\n";
    return 1;
  }
}
