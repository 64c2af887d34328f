#include "ctxc/dataset.hpp"

#include <fstream>
#include <random>
#include <unordered_set>

#include <json.hpp>

#include "ctxc/errors.hpp"

namespace ctxc {

using nlohmann::json;

namespace {

const char* kSubjects[] = {"Al", "Bo",  "Cy",  "Dee", "Eli", "Fay", "Gus", "Ida",
                           "Joy", "Kim", "Lev", "Mo",  "Nia", "Oz",  "Pia", "Rex"};
const char* kVerbs[] = {"hid", "saw", "got", "won", "cut", "led", "dug", "ate"};
const char* kObjects[] = {"jars", "maps", "cans", "kegs", "rugs",
                          "logs", "nets", "pots", "figs", "hats"};

uint64_t draw(std::mt19937_64& rng, uint64_t n) { return rng() % n; }

// Filler sentences carry random numerals so their per-token surprisal is
// comparable to the needle's; a self-information baseline then has no
// trivial tell for needle chunks.
std::string filler_sentence(std::mt19937_64& rng) {
  const char* s = kSubjects[draw(rng, std::size(kSubjects))];
  const char* v = kVerbs[draw(rng, std::size(kVerbs))];
  const char* o = kObjects[draw(rng, std::size(kObjects))];
  const int n = 10 + static_cast<int>(draw(rng, 90));
  return std::string(s) + " " + v + " " + std::to_string(n) + " " + o + ".";
}

// Two uppercase letters; the only adjacent-uppercase pairs in the corpus,
// so a negative document can never contain the positive's key by accident.
std::string random_key(std::mt19937_64& rng) {
  std::string k;
  k.push_back(static_cast<char>('A' + draw(rng, 26)));
  k.push_back(static_cast<char>('A' + draw(rng, 26)));
  return k;
}

std::string random_value(std::mt19937_64& rng) {
  std::string v;
  for (int i = 0; i < 3; ++i) v.push_back(static_cast<char>('0' + draw(rng, 10)));
  return v;
}

struct Sample {
  std::string key;
  std::string document;
  int needle_index;
};

Sample make_sample(std::mt19937_64& rng, int fillers_per_doc, const std::string& key,
                   const std::string& value) {
  const int total = fillers_per_doc + 1;
  const int needle_at = static_cast<int>(draw(rng, static_cast<uint64_t>(total)));
  std::string doc;
  for (int s = 0; s < total; ++s) {
    if (s > 0) doc += " ";
    if (s == needle_at)
      doc += "The code for " + key + " is " + value + ".";
    else
      doc += filler_sentence(rng);
  }
  return {key, doc, needle_at};
}

}  // namespace

Dataset gen_synthetic(int n, int fillers_per_doc, uint64_t seed, int candidates_per_set) {
  if (n < 1) throw std::invalid_argument("gen_synthetic: n must be >= 1");
  if (fillers_per_doc < 1)
    throw std::invalid_argument("gen_synthetic: fillers_per_doc must be >= 1");
  if (candidates_per_set < 2)
    throw std::invalid_argument("gen_synthetic: candidate sets need >= 2 candidates");

  std::mt19937_64 rng(seed);
  Dataset data;
  std::vector<std::string> keys(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::string key = random_key(rng);
    const std::string value = random_value(rng);
    Sample s = make_sample(rng, fillers_per_doc, key, value);
    keys[static_cast<size_t>(i)] = key;
    QAPair qa;
    qa.id = i;
    qa.instruction = "What is the code for " + key + "?";
    qa.document = s.document;
    qa.reference = value;
    qa.needle_chunk_index = s.needle_index;
    data.qa.push_back(std::move(qa));
  }

  for (int i = 0; i < n; ++i) {
    CandidateSet set;
    set.id = i;
    set.instruction = data.qa[static_cast<size_t>(i)].instruction;
    set.candidates.push_back(data.qa[static_cast<size_t>(i)].document);
    std::unordered_set<int> used{i};
    while (static_cast<int>(set.candidates.size()) < candidates_per_set) {
      bool found = false;
      for (int attempt = 0; attempt < 64 && n > 1; ++attempt) {
        const int j = static_cast<int>(draw(rng, static_cast<uint64_t>(n)));
        if (used.count(j) || keys[static_cast<size_t>(j)] == keys[static_cast<size_t>(i)])
          continue;
        set.candidates.push_back(data.qa[static_cast<size_t>(j)].document);
        used.insert(j);
        found = true;
        break;
      }
      if (!found) {
        // corpus too small (or key-saturated): synthesize a distractor
        std::string key;
        do {
          key = random_key(rng);
        } while (key == keys[static_cast<size_t>(i)]);
        set.candidates.push_back(
            make_sample(rng, fillers_per_doc, key, random_value(rng)).document);
      }
    }
    data.candidates.push_back(std::move(set));
  }
  return data;
}

// ---- JSON-lines I/O ----

namespace {

json qa_to_json(const QAPair& qa) {
  json j{{"id", qa.id},
         {"instruction", qa.instruction},
         {"document", qa.document},
         {"reference", qa.reference}};
  if (qa.needle_chunk_index) j["needle_chunk_index"] = *qa.needle_chunk_index;
  return j;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path);
  return f;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path);
  return f;
}

}  // namespace

void write_qa_jsonl(const std::string& path, const std::vector<QAPair>& qa) {
  auto f = open_out(path);
  for (const QAPair& q : qa) f << qa_to_json(q).dump() << "\n";
}

std::vector<QAPair> read_qa_jsonl(const std::string& path) {
  auto f = open_in(path);
  std::vector<QAPair> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      QAPair qa;
      qa.id = j.value("id", static_cast<int64_t>(line_no - 1));
      qa.instruction = j.at("instruction").get<std::string>();
      qa.document = j.at("document").get<std::string>();
      qa.reference = j.value("reference", std::string());
      if (j.contains("needle_chunk_index"))
        qa.needle_chunk_index = j["needle_chunk_index"].get<int>();
      out.push_back(std::move(qa));
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_candidates_jsonl(const std::string& path, const std::vector<CandidateSet>& sets) {
  auto f = open_out(path);
  for (const CandidateSet& s : sets) {
    json j{{"id", s.id}, {"instruction", s.instruction}, {"candidates", s.candidates}};
    f << j.dump() << "\n";
  }
}

std::vector<CandidateSet> read_candidates_jsonl(const std::string& path) {
  auto f = open_in(path);
  std::vector<CandidateSet> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      CandidateSet s;
      s.id = j.value("id", static_cast<int64_t>(line_no - 1));
      s.instruction = j.at("instruction").get<std::string>();
      s.candidates = j.at("candidates").get<std::vector<std::string>>();
      if (s.candidates.size() < 2)
        throw DataError(path + ":" + std::to_string(line_no) +
                        ": candidate set needs at least 2 documents");
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---- validation ----

ValidationReport validate_dataset(const std::string& path, DatasetSchema schema,
                                  int max_reported) {
  auto f = open_in(path);
  ValidationReport rep;
  std::string line;
  int line_no = 0;
  auto violation = [&](int ln, const std::string& msg) {
    if (static_cast<int>(rep.violations.size()) < max_reported)
      rep.violations.push_back({ln, msg});
  };
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    ++rep.total_lines;
    json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) {
      violation(line_no, "not valid JSON");
      continue;
    }
    bool ok = true;
    auto need_string = [&](const char* field) {
      if (!j.contains(field) || !j[field].is_string()) {
        violation(line_no, std::string("missing or non-string \"") + field + "\"");
        ok = false;
      }
    };
    if (schema == DatasetSchema::kQa) {
      need_string("instruction");
      need_string("document");
      need_string("reference");
      if (j.contains("needle_chunk_index") &&
          (!j["needle_chunk_index"].is_number_integer() ||
           j["needle_chunk_index"].get<int64_t>() < 0)) {
        violation(line_no, "\"needle_chunk_index\" must be a non-negative integer");
        ok = false;
      }
    } else {
      need_string("instruction");
      if (!j.contains("candidates") || !j["candidates"].is_array() ||
          j["candidates"].size() < 2) {
        violation(line_no, "\"candidates\" must be an array of at least 2 documents");
        ok = false;
      } else {
        for (const auto& c : j["candidates"])
          if (!c.is_string()) {
            violation(line_no, "\"candidates\" entries must be strings");
            ok = false;
            break;
          }
        // which candidate is the positive is a labeling convention the
        // schema cannot see
        if (ok && rep.warnings.empty())
          rep.warnings.push_back(
              {line_no, "positive-at-index-0 convention cannot be verified structurally"});
      }
    }
    if (ok) ++rep.valid_count;
  }
  return rep;
}

}  // namespace ctxc
