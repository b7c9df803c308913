#include "ddr/synthetic.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>
#include <string>

#include "ddr/util.hpp"

namespace ddr {

namespace {

std::string entity(std::size_t i) { return "ent" + std::to_string(i); }
constexpr std::array<const char*, 16> kShades = {"red",   "blue",  "green", "grey",  "amber", "black",
                                                  "white", "gold",  "pale",  "dark",  "rust",  "jade",
                                                  "ivory", "coral", "plum",  "teal"};
constexpr std::array<const char*, 16> kPlaces = {"river", "stone", "field", "tower", "bridge", "harbor",
                                                  "forest", "valley", "market", "garden", "castle", "island",
                                                  "meadow", "canyon", "temple", "orchard"};
constexpr std::size_t kTopics = kShades.size() * kPlaces.size();

std::string topic(std::size_t i) {
  i %= kTopics;
  return std::string(kShades[i / kPlaces.size()]) + " " + kPlaces[i % kPlaces.size()];
}

constexpr std::array<const char*, 4> kDistractorForms = {
    "records show {T} is linked to {E} in the archive",
    "notes say {T} was linked to {E} long ago",
    "some claim {T} is linked to {E} but records differ",
    "the archive lists {T} near {E} and other notes",
};

std::string fill(std::string form, const std::string& t, const std::string& e) {
  for (auto [key, value] : {std::pair{std::string("{T}"), t}, std::pair{std::string("{E}"), e}}) {
    for (auto pos = form.find(key); pos != std::string::npos; pos = form.find(key))
      form.replace(pos, key.size(), value);
  }
  return form;
}

}  // namespace

std::vector<QueryRecord> generate_synthetic(const SyntheticOptions& options) {
  if (options.entities < 2) throw std::invalid_argument("need at least two entities");
  if (options.answer_mentions < 1) throw std::invalid_argument("answer must be mentioned");
  if (options.docs_per_record < 5) throw std::invalid_argument("need at least five documents");
  Rng rng(options.seed);
  // distinct topics while they last
  std::vector<std::size_t> topics(std::max(options.records, kTopics));
  for (std::size_t i = 0; i < topics.size(); ++i) topics[i] = i;
  for (std::size_t i = 0; i + 1 < kTopics; ++i) std::swap(topics[i], topics[i + rng.below(kTopics - i)]);
  std::vector<QueryRecord> out;
  out.reserve(options.records);
  for (std::size_t r = 0; r < options.records; ++r) {
    QueryRecord rec;
    rec.id = "syn" + std::to_string(r);
    rec.task = "qa-accuracy";
    const std::string t = topic(topics[r]);
    const std::size_t answer = rng.below(options.entities);
    rec.query = "which entity is linked to " + t;
    rec.answers = {entity(answer)};

    const bool miss = rng.uniform() < options.miss_fraction;
    std::size_t gold_slot = miss ? 5 + rng.below(options.docs_per_record - 5) : rng.below(5);
    if (miss && options.docs_per_record == 5) gold_slot = rng.below(5);

    for (std::size_t d = 0; d < options.docs_per_record; ++d) {
      Document doc;
      doc.doc_id = rec.id + "-d" + std::to_string(d);
      doc.rank = static_cast<int>(d + 1);
      doc.score = 1.0 - static_cast<double>(d) / static_cast<double>(options.docs_per_record);
      if (d == gold_slot) {
        const auto a = entity(answer);
        doc.text = "records show " + t + " is linked to " + a;
        for (std::size_t m = 1; m < options.answer_mentions; ++m) doc.text += " and " + a;
        doc.text += " alone";
      } else {
        std::size_t e = rng.below(options.entities - 1);
        if (e >= answer) ++e;
        // distractors mention this topic or another record's topic
        const std::string dt = rng.uniform() < options.same_topic_fraction ? t : topic(rng.below(kTopics));
        doc.text = fill(kDistractorForms[rng.below(kDistractorForms.size())], dt, entity(e));
      }
      rec.docs.push_back(std::move(doc));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace ddr
