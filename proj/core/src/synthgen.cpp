// SPDX-License-Identifier: Apache-2.0

#include "guiderag/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace guiderag {

using ojson = nlohmann::ordered_json;

std::string_view to_string(SynthMode mode) {
  return mode == SynthMode::kOneToOne ? "one-to-one" : "one-to-many";
}

SynthMode parse_synth_mode(std::string_view text) {
  if (text == "one-to-many" || text == "ONE_TO_MANY") return SynthMode::kOneToMany;
  if (text == "one-to-one" || text == "ONE_TO_ONE") return SynthMode::kOneToOne;
  throw InvalidArgument("unknown synthetic mode '" + std::string(text) +
                        "' (expected one-to-many or one-to-one)");
}

std::size_t SynthConfig::copied_tokens() const {
  return static_cast<std::size_t>(std::lround(copy_rate * static_cast<double>(target_len)));
}

std::size_t SynthConfig::required_vocab() const {
  const std::size_t distractors_per_passage =
      passage_len > topic_words_per_topic ? passage_len - topic_words_per_topic : 0;
  const std::size_t distractor_pool = std::max(multiplicity() * distractors_per_passage, passage_len);
  return filler_pool + n_topics * (topic_words_per_topic + cue_words_per_topic) + distractor_pool;
}

void SynthConfig::validate() const {
  if (n_topics == 0) throw InvalidArgument("n_topics must be positive");
  if (mode == SynthMode::kOneToMany && passages_per_topic < 2) {
    throw InvalidArgument("one-to-many mode requires passages_per_topic >= 2");
  }
  if (!(copy_rate > 0.0 && copy_rate <= 1.0)) throw InvalidArgument("copy_rate must lie in (0, 1]");
  if (target_len == 0 || copied_tokens() == 0) {
    throw InvalidArgument("target must copy at least one passage token");
  }
  if (passage_len <= topic_words_per_topic) {
    throw InvalidArgument("passage_len must exceed topic_words_per_topic");
  }
  if (copied_tokens() > passage_len - topic_words_per_topic) {
    throw InvalidArgument("copy_rate * target_len exceeds the passage's own distractor words");
  }
  if (topic_words_per_topic == 0) throw InvalidArgument("topic_words_per_topic must be positive");
  if (context_len < cue_words_per_topic + 1) {
    throw InvalidArgument("context_len must leave room for the cue and topic words");
  }
  if (target_len > copied_tokens() && filler_pool == 0) {
    throw InvalidArgument("targets need filler words but filler_pool is 0");
  }
  if (n_passages < n_topics * multiplicity()) {
    throw InvalidArgument("n_passages must be at least n_topics * passages_per_topic (" +
                          std::to_string(n_topics * multiplicity()) + ")");
  }
  if (background_topic_words >= passage_len) {
    throw InvalidArgument("background_topic_words must be below passage_len");
  }
  if (n_examples == 0) throw InvalidArgument("n_examples must be positive");
  if (!(dev_fraction >= 0.0 && dev_fraction < 1.0)) {
    throw InvalidArgument("dev_fraction must lie in [0, 1)");
  }
  if (!(literal_topic_prob >= 0.0 && literal_topic_prob <= 1.0)) {
    throw InvalidArgument("literal_topic_prob must lie in [0, 1]");
  }
  if (vocab_size < required_vocab()) {
    throw InvalidArgument("vocab_size " + std::to_string(vocab_size) +
                          " too small for the requested structure; need at least " +
                          std::to_string(required_vocab()));
  }
}

namespace {

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

template <typename T>
std::vector<T> sample_without_replacement(const std::vector<T>& pool, std::size_t n,
                                          std::mt19937_64& rng) {
  std::vector<T> copy = pool;
  std::shuffle(copy.begin(), copy.end(), rng);
  copy.resize(n);
  return copy;
}

struct Topic {
  std::vector<std::string> topic_words;
  std::vector<std::string> cue_words;
  std::vector<PassageId> passages;
  std::vector<std::vector<std::string>> own_words;  // per passage, its distractors
};

struct RawExample {
  std::string context;
  std::string target;
  PassageId gold = 0;
  std::size_t topic = 0;
};

}  // namespace

SynthDataset generate(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);

  // Word strings carry no hint of their role.
  std::vector<std::size_t> order(cfg.vocab_size);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t next = 0;
  auto fresh = [&] { return "w" + std::to_string(order[next++]); };

  std::vector<std::string> filler(cfg.filler_pool);
  for (auto& w : filler) w = fresh();
  std::vector<Topic> topics(cfg.n_topics);
  std::vector<std::string> all_topic_words;
  for (auto& t : topics) {
    for (std::size_t i = 0; i < cfg.topic_words_per_topic; ++i) {
      t.topic_words.push_back(fresh());
      all_topic_words.push_back(t.topic_words.back());
    }
    for (std::size_t i = 0; i < cfg.cue_words_per_topic; ++i) t.cue_words.push_back(fresh());
  }
  std::vector<std::string> distractors;
  while (next < cfg.vocab_size) distractors.push_back(fresh());

  const std::size_t m = cfg.multiplicity();
  const std::size_t own = cfg.passage_len - cfg.topic_words_per_topic;

  std::vector<PassageId> ids(cfg.n_passages);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<PassageId>(i);
  std::shuffle(ids.begin(), ids.end(), rng);

  std::vector<std::string> texts(cfg.n_passages);
  std::size_t slot = 0;
  for (auto& t : topics) {
    const auto pool = sample_without_replacement(distractors, m * own, rng);
    for (std::size_t j = 0; j < m; ++j) {
      std::vector<std::string> own_words(pool.begin() + static_cast<std::ptrdiff_t>(j * own),
                                         pool.begin() + static_cast<std::ptrdiff_t>((j + 1) * own));
      std::vector<std::string> words = t.topic_words;
      words.insert(words.end(), own_words.begin(), own_words.end());
      std::shuffle(words.begin(), words.end(), rng);
      const PassageId id = ids[slot++];
      texts[static_cast<std::size_t>(id)] = join(words);
      t.passages.push_back(id);
      t.own_words.push_back(std::move(own_words));
    }
  }
  while (slot < cfg.n_passages) {
    auto words = sample_without_replacement(all_topic_words, cfg.background_topic_words, rng);
    const auto rest =
        sample_without_replacement(distractors, cfg.passage_len - cfg.background_topic_words, rng);
    words.insert(words.end(), rest.begin(), rest.end());
    std::shuffle(words.begin(), words.end(), rng);
    texts[static_cast<std::size_t>(ids[slot++])] = join(words);
  }

  std::uniform_int_distribution<std::size_t> pick_topic(0, cfg.n_topics - 1);
  std::uniform_int_distribution<std::size_t> pick_passage(0, m - 1);
  std::uniform_int_distribution<std::size_t> pick_filler(0, filler.empty() ? 0 : filler.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_topic_word(0, cfg.topic_words_per_topic - 1);
  std::bernoulli_distribution literal(cfg.literal_topic_prob);

  std::vector<RawExample> raw(cfg.n_examples);
  for (auto& ex : raw) {
    ex.topic = pick_topic(rng);
    const Topic& t = topics[ex.topic];
    const std::size_t j = pick_passage(rng);
    ex.gold = t.passages[j];

    std::vector<std::string> ctx = t.cue_words;
    if (literal(rng)) ctx.push_back(t.topic_words[pick_topic_word(rng)]);
    while (ctx.size() < cfg.context_len) ctx.push_back(filler[pick_filler(rng)]);
    std::shuffle(ctx.begin(), ctx.end(), rng);
    ex.context = join(ctx);

    auto tgt = sample_without_replacement(t.own_words[j], cfg.copied_tokens(), rng);
    while (tgt.size() < cfg.target_len) tgt.push_back(filler[pick_filler(rng)]);
    std::shuffle(tgt.begin(), tgt.end(), rng);
    ex.target = join(tgt);
  }

  SynthDataset out;
  out.config = cfg;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    out.data.corpus.add_passage(static_cast<PassageId>(i), texts[i]);
  }
  const auto n_dev = static_cast<std::size_t>(
      std::floor(cfg.dev_fraction * static_cast<double>(cfg.n_examples)));
  const std::size_t n_train = cfg.n_examples - n_dev;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const bool dev = i >= n_train;
    auto ex = make_example(static_cast<ExampleId>(i), raw[i].context, raw[i].target, raw[i].gold,
                           out.data.corpus);
    (dev ? out.data.dev : out.data.train).push_back(std::move(ex));
    GroundTruth g;
    g.example_id = static_cast<ExampleId>(i);
    g.gold = raw[i].gold;
    g.context_relevant = topics[raw[i].topic].passages;
    std::sort(g.context_relevant.begin(), g.context_relevant.end());
    g.topic = raw[i].topic;
    g.dev = dev;
    out.truth.push_back(std::move(g));
  }
  return out;
}

std::string to_json(const SynthConfig& c) {
  ojson j{{"seed", c.seed},
          {"vocab_size", c.vocab_size},
          {"n_topics", c.n_topics},
          {"passages_per_topic", c.passages_per_topic},
          {"n_passages", c.n_passages},
          {"n_examples", c.n_examples},
          {"passage_len", c.passage_len},
          {"target_len", c.target_len},
          {"copy_rate", c.copy_rate},
          {"context_len", c.context_len},
          {"mode", std::string(to_string(c.mode))},
          {"dev_fraction", c.dev_fraction},
          {"topic_words_per_topic", c.topic_words_per_topic},
          {"cue_words_per_topic", c.cue_words_per_topic},
          {"literal_topic_prob", c.literal_topic_prob},
          {"background_topic_words", c.background_topic_words},
          {"filler_pool", c.filler_pool}};
  return j.dump(2) + "\n";
}

SynthConfig synth_config_from_json(std::string_view text, const SynthConfig& base) {
  SynthConfig c = base;
  try {
    const auto j = ojson::parse(text);
    if (!j.is_object()) throw InvalidArgument("synthetic config must be a JSON object");
    for (const auto& [key, v] : j.items()) {
      if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "vocab_size") c.vocab_size = v.get<std::size_t>();
      else if (key == "n_topics") c.n_topics = v.get<std::size_t>();
      else if (key == "passages_per_topic") c.passages_per_topic = v.get<std::size_t>();
      else if (key == "n_passages") c.n_passages = v.get<std::size_t>();
      else if (key == "n_examples") c.n_examples = v.get<std::size_t>();
      else if (key == "passage_len") c.passage_len = v.get<std::size_t>();
      else if (key == "target_len") c.target_len = v.get<std::size_t>();
      else if (key == "copy_rate") c.copy_rate = v.get<double>();
      else if (key == "context_len") c.context_len = v.get<std::size_t>();
      else if (key == "mode") c.mode = parse_synth_mode(v.get<std::string>());
      else if (key == "dev_fraction") c.dev_fraction = v.get<double>();
      else if (key == "topic_words_per_topic") c.topic_words_per_topic = v.get<std::size_t>();
      else if (key == "cue_words_per_topic") c.cue_words_per_topic = v.get<std::size_t>();
      else if (key == "literal_topic_prob") c.literal_topic_prob = v.get<double>();
      else if (key == "background_topic_words") c.background_topic_words = v.get<std::size_t>();
      else if (key == "filler_pool") c.filler_pool = v.get<std::size_t>();
      else throw InvalidArgument("unknown synthetic config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed synthetic config: ") + e.what());
  }
  return c;
}

void write_synth(const SynthDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_corpus(ds.data.corpus, dir / "passages.jsonl");
  save_examples(ds.data.train, dir / "examples.jsonl");
  save_examples(ds.data.dev, dir / "dev.jsonl");

  ojson j;
  j["config"] = ojson::parse(to_json(ds.config));
  j["examples"] = ojson::array();
  for (const auto& g : ds.truth) {
    j["examples"].push_back({{"id", g.example_id},
                             {"gold_passage_id", g.gold},
                             {"context_relevant", g.context_relevant},
                             {"topic", g.topic},
                             {"split", g.dev ? "dev" : "train"}});
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + (dir / "manifest.json").string());
  out << j.dump(2) << '\n';
}

std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw InvalidArgument("cannot open " + manifest.string());
  try {
    const auto j = ojson::parse(in);
    std::vector<GroundTruth> out;
    for (const auto& e : j.at("examples")) {
      GroundTruth g;
      g.example_id = e.at("id").get<ExampleId>();
      g.gold = e.at("gold_passage_id").get<PassageId>();
      g.context_relevant = e.at("context_relevant").get<std::vector<PassageId>>();
      g.topic = e.at("topic").get<std::size_t>();
      g.dev = e.at("split").get<std::string>() == "dev";
      out.push_back(std::move(g));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(manifest.string() + ": " + e.what());
  }
}

}  // namespace guiderag
