// Serves logp_sentence from a saved n-gram model and logp_cond from a saved
// reordering model.  usage: model_scorer --lm FILE --reorder FILE
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"
#include "wordorder/ngram.hpp"
#include "wordorder/reorder.hpp"

using nlohmann::json;

int main(int argc, char** argv) {
  std::string lm_path, reorder_path;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string a = argv[i];
    if (a == "--lm") lm_path = argv[i + 1];
    if (a == "--reorder") reorder_path = argv[i + 1];
  }
  std::shared_ptr<const wordorder::NgramModel> lm;
  std::optional<wordorder::ReorderModel> rm;
  json caps = json::array();
  if (!lm_path.empty()) {
    std::ifstream f(lm_path);
    lm = std::make_shared<const wordorder::NgramModel>(wordorder::NgramModel::load(f));
    caps.push_back("logp_sentence");
  }
  if (!reorder_path.empty()) {
    std::ifstream f(reorder_path);
    rm.emplace(wordorder::ReorderModel::load(f));
    caps.push_back("logp_cond");
  }

  std::string line;
  while (std::getline(std::cin, line)) {
    json reply;
    try {
      const json req = json::parse(line);
      const std::string op = req.value("op", "");
      if (op == "hello") {
        reply = {{"ok", true}, {"version", 1}, {"capabilities", caps}};
      } else {
        reply["id"] = req.at("id");
        if (op == "logp_sentence" && lm) {
          reply["logp2"] = lm->logp_sentence(req.at("tokens").get<wordorder::Tokens>());
        } else if (op == "logp_cond" && rm) {
          reply["logp2"] = rm->q_logp(req.at("target").get<wordorder::Tokens>(),
                                      req.at("condition").get<wordorder::Tokens>());
        } else {
          reply["error"] = "unsupported op " + op;
        }
      }
    } catch (const std::exception& e) {
      reply["error"] = e.what();
    }
    std::cout << reply.dump() << '\n' << std::flush;
  }
  return 0;
}
