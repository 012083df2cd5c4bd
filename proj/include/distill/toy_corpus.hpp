#pragma once

// Small built-in corpus for the toy generator. Paragraphs open with the same
// prefixes the domain templates produce, so the n-gram table has statistics
// right after a filled prefix.

#include <array>
#include <span>
#include <string_view>
#include <vector>

#include "distill/lmcore.hpp"
#include "distill/textmetrics.hpp"

namespace distill {

inline constexpr std::array<std::string_view, 14> kToyNews = {
    "London, (CNN) -- The storm hit the coast on Monday. The storm closed roads and schools across the region. "
    "Officials said the roads would reopen on Tuesday.",
    "Paris, (Reuters) -- The city council approved a new budget for schools. The budget adds money for teachers "
    "and books. The council said the plan would start next year.",
    "New York, (AP) -- Markets rose sharply after the report on jobs. The report showed strong hiring in March. "
    "Analysts said markets rose on the report.",
    "Washington, (BBC) -- The president signed a bill on clean energy. The bill gives money to new energy projects. "
    "Officials said the bill would create jobs.",
    "Tokyo, (AFP) -- A strong earthquake shook the city on Sunday. The earthquake damaged roads and some buildings. "
    "No one was hurt in the earthquake.",
    "Berlin, (CNN) -- Police closed the main bridge after a fire. The fire started in a truck on the bridge. "
    "Police said the bridge would reopen on Monday.",
    "Sydney, (Reuters) -- Heavy rain fell across the city for a week. The rain flooded roads and homes near the river. "
    "Officials said the river would rise again.",
    "Toronto, (AP) -- The team won the final game of the season. The team scored two goals in the last minute. "
    "Fans said the game was the best of the season.",
    "London, (BBC) -- The hospital opened a new wing for children. The new wing has beds for sick children and "
    "their families. Doctors said the wing would help families.",
    "Paris, (AFP) -- Workers went on strike over pay on Friday. The strike closed trains across the country. "
    "Officials said the trains would run again on Monday.",
    "Washington, (CNN) -- The senate passed a bill on new roads. The bill gives money to cities for roads and bridges. "
    "The senate said the bill would create jobs.",
    "New York, (Reuters) -- The company reported strong sales in March. Sales rose after the company cut prices. "
    "Analysts said the company would hire more workers.",
    "Tokyo, (BBC) -- The city opened a new train line on Friday. The train line links the airport and the city. "
    "Officials said the line would cut travel time.",
    "Berlin, (AP) -- The museum opened a new show on art. The show has art from the last century. "
    "The museum said the show would run for a year.",
};

inline constexpr std::array<std::string_view, 12> kToyReddit = {
    "(r/Gaming) I finally beat the last boss in the game. The boss took me three hours to beat. "
    "The game was hard but the ending was great.",
    "(r/science) A new study found that sleep helps memory. The study tested memory after a night of sleep. "
    "People who slept had better memory.",
    "(r/explainlikeimfive) Why does the sky look blue? The light from the sun hits the air. "
    "The air scatters blue light more than red light.",
    "(r/AskReddit) What is the best advice you ever got? My dad told me to save money early. "
    "The advice helped me buy a house.",
    "(r/worldnews) The government announced new rules for the internet. The rules require companies to protect data. "
    "Companies said the rules would cost money.",
    "(r/technology) The new phone has a faster chip and a better camera. The camera takes great photos at night. "
    "The phone costs more than the last one.",
    "(r/Gaming) The new game sold a million copies in a week. Players said the game was fun and hard. "
    "The studio said a new game would come next year.",
    "(r/science) Scientists found water on a small moon. The water is under the ice on the moon. "
    "The study said life could exist in the water.",
    "(r/explainlikeimfive) Why do we need sleep? Sleep helps the brain clean itself. "
    "The brain stores memory during sleep.",
    "(r/AskReddit) What food do you eat every day? I eat rice and eggs every day. "
    "Rice and eggs are cheap and good.",
    "(r/worldnews) Heavy rain flooded the capital on Sunday. The rain closed roads and schools. "
    "The government said the schools would open on Monday.",
    "(r/technology) The company released a new laptop with a faster chip. The laptop is light and the battery lasts "
    "all day. Reviewers said the laptop was the best this year.",
};

inline constexpr std::array<std::string_view, 12> kToyBiomedical = {
    "The patients received the drug for twelve weeks. The drug reduced blood pressure in most patients. "
    "No serious side effects were reported.",
    "The study measured blood sugar in adults with diabetes. Blood sugar fell after the treatment. "
    "The treatment was safe in adults.",
    "The protein binds to the receptor on the cell surface. The receptor signals the cell to grow. "
    "Blocking the receptor stopped cell growth.",
    "The mice were treated with the new compound. The compound reduced tumor growth in the mice. "
    "The tumor cells died after the treatment.",
    "The trial enrolled patients with heart failure. The drug improved heart function after six months. "
    "Patients in the trial reported fewer symptoms.",
    "The virus infects cells in the lung. The infection causes fever and cough. "
    "The vaccine reduced infection in the trial.",
    "The gene controls the growth of the cell. Loss of the gene causes the cell to divide. "
    "The study found the gene in tumor cells.",
    "The children received the vaccine at two months. The vaccine protected the children from infection. "
    "Side effects were mild in the children.",
    "Blood samples were taken before and after the treatment. The samples showed lower levels of the protein. "
    "The protein levels fell in most patients.",
    "The drug blocks the enzyme in the liver. The enzyme makes fat in the liver. "
    "Blocking the enzyme reduced fat in the trial.",
    "Patients with the disease had high levels of the protein. The protein damages cells in the brain. "
    "The drug lowered the protein in the brain.",
    "The study compared two treatments for pain. Both treatments reduced pain after four weeks. "
    "Patients preferred the new treatment.",
};

/// Tokenized corpus for a domain: each paragraph is one sequence.
inline std::vector<TokenSeq> toy_corpus(std::span<const std::string_view> paragraphs) {
  std::vector<TokenSeq> out;
  out.reserve(paragraphs.size());
  for (auto p : paragraphs) out.push_back(tokenize(p));
  return out;
}

/// All three domains pooled; one generator serves every domain template.
inline std::vector<TokenSeq> toy_corpus_all() {
  std::vector<TokenSeq> out = toy_corpus(kToyNews);
  for (auto& s : toy_corpus(kToyReddit)) out.push_back(std::move(s));
  for (auto& s : toy_corpus(kToyBiomedical)) out.push_back(std::move(s));
  return out;
}

inline const ToyLM& default_toy_lm() {
  static const ToyLM lm = build_toy_lm(toy_corpus_all(), 3);
  return lm;
}

}  // namespace distill
