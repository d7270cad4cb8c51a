#include "nudge/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "nudge/rng.hpp"

namespace nudge {

using nlohmann::json;

namespace {

const std::vector<std::string> kRegions = {"Jakarta", "Bandung",  "Surabaya", "Medan",
                                           "Semarang", "Makassar", "Denpasar", "Palembang"};
const std::vector<double> kRegionWeights = {0.30, 0.14, 0.13, 0.11, 0.09, 0.09, 0.08, 0.06};

std::string pad_id(const char* prefix, int i) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%s%05d", prefix, i);
  return buf;
}

int sample_weighted(Rng& rng, const std::vector<double>& weights) {
  double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size()) - 1;
}

}  // namespace

void SimConfig::validate() const {
  if (n_pharmacies < 0) throw Error("sim config: n_pharmacies must be >= 0");
  if (catalog_size < 2) throw Error("sim config: catalog_size must be >= 2");
  if (weeks < 0) throw Error("sim config: weeks must be >= 0");
  if (!(uplift_effect > 0.0)) throw Error("sim config: uplift_effect must be positive");
  if (responder_fraction < 0.0 || responder_fraction > 1.0)
    throw Error("sim config: responder_fraction must lie in [0,1]");
  if (block_size < 2) throw Error("sim config: block_size must be >= 2");
}

UnixSeconds SimConfig::week_start(int week_index) const {
  return (start_day + static_cast<std::int64_t>(week_index) * 7) * kSecondsPerDay -
         static_cast<UnixSeconds>(utc_offset_hours) * kSecondsPerHour;
}

std::string sku_name(int sku_index) { return pad_id("sku", sku_index); }

Population generate_population(const SimConfig& config) {
  config.validate();
  Population pop;
  pop.config = config;
  pop.pharmacies.reserve(static_cast<std::size_t>(config.n_pharmacies));

  const int n_blocks = (config.catalog_size + config.block_size - 1) / config.block_size;
  // Skewed block popularity so a few blocks dominate co-purchases.
  std::vector<double> block_weights(static_cast<std::size_t>(n_blocks));
  double wsum = 0.0;
  for (int b = 0; b < n_blocks; ++b) {
    block_weights[static_cast<std::size_t>(b)] = std::pow(0.6, b);
    wsum += block_weights[static_cast<std::size_t>(b)];
  }
  for (auto& w : block_weights) w /= wsum;

  int user_counter = 0;
  for (int i = 0; i < config.n_pharmacies; ++i) {
    Rng rng = Rng::stream(config.seed, "pharm|" + std::to_string(i));
    PharmacyProfile ph;
    ph.pharmacy_id = pad_id("p", i);

    double u = rng.uniform();
    int n_users = u < 0.55 ? 1 : (u < 0.93 ? 2 : 3);
    for (int k = 0; k < n_users; ++k) ph.user_ids.push_back(pad_id("u", user_counter++));

    ph.region = kRegions[static_cast<std::size_t>(sample_weighted(rng, kRegionWeights))];
    ph.order_rate = rng.lognormal(std::log(1.2), 0.4);
    ph.spend_scale = rng.lognormal(std::log(50.0), 0.5);

    double engagement_z = rng.normal();
    ph.engagement = std::exp(std::log(3.0) + 0.35 * engagement_z);

    // Responder status leans on engagement so context features carry signal.
    double p_resp = std::clamp(config.responder_fraction + 0.20 * engagement_z, 0.0, 1.0);
    bool responder = config.responder_fraction > 0.0 && rng.bernoulli(p_resp);
    ph.responsiveness = responder ? rng.uniform(0.6, 0.95) : 0.0;

    // Two preferred catalog blocks get 80% of the affinity mass.
    ph.affinity.assign(static_cast<std::size_t>(config.catalog_size), 0.0);
    int b1 = sample_weighted(rng, block_weights);
    int b2 = sample_weighted(rng, block_weights);
    double rest = 0.0;
    for (int s = 0; s < config.catalog_size; ++s) {
      int blk = s / config.block_size;
      double w = (blk == b1 || blk == b2) ? rng.uniform(0.5, 1.0) : 0.02 * rng.uniform(0.5, 1.0);
      ph.affinity[static_cast<std::size_t>(s)] = w;
      rest += w;
    }
    for (auto& w : ph.affinity) w /= rest;

    pop.pharmacies.push_back(std::move(ph));
  }
  return pop;
}

namespace {

// Basket skus without replacement, proportional to affinity.
std::vector<int> draw_basket(Rng& rng, const std::vector<double>& affinity, int n_lines) {
  std::vector<double> weights = affinity;
  std::vector<int> skus;
  for (int k = 0; k < n_lines && static_cast<std::size_t>(k) < weights.size(); ++k) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (total <= 0.0) break;
    double u = rng.uniform() * total;
    double acc = 0.0;
    int pick = -1;
    for (std::size_t s = 0; s < weights.size(); ++s) {
      acc += weights[s];
      if (u < acc) {
        pick = static_cast<int>(s);
        break;
      }
    }
    if (pick < 0) pick = static_cast<int>(weights.size()) - 1;
    skus.push_back(pick);
    weights[static_cast<std::size_t>(pick)] = 0.0;
  }
  return skus;
}

}  // namespace

std::vector<EventRecord> step_week(const Population& population,
                                   std::span<const PendingNudge> pending, UnixSeconds week_start,
                                   int week_index) {
  const SimConfig& cfg = population.config;
  std::vector<EventRecord> events;

  for (const auto& ph : population.pharmacies) {
    Rng rng = Rng::stream(cfg.seed, "wk|" + std::to_string(week_index) + "|" + ph.pharmacy_id);

    // Logins per user.
    for (const auto& user : ph.user_ids) {
      int n_logins = rng.poisson(ph.engagement);
      for (int k = 0; k < n_logins; ++k) {
        EventRecord e;
        e.ts = week_start + static_cast<UnixSeconds>(rng.uniform() * kSecondsPerWeek);
        e.user_id = user;
        e.pharmacy_id = ph.pharmacy_id;
        e.kind = EventKind::login;
        LoginPayload lp;
        lp.lang = cfg.language;
        lp.region = ph.region;
        lp.session_secs = std::round(rng.lognormal(std::log(600.0), 0.8));
        e.payload = std::move(lp);
        events.push_back(std::move(e));
      }
    }

    // Orders for the pharmacy, attributed to one of its users.
    std::vector<std::size_t> week_orders;  // indices into `events`
    int n_orders = rng.poisson(ph.order_rate);
    for (int k = 0; k < n_orders; ++k) {
      EventRecord e;
      e.ts = week_start + static_cast<UnixSeconds>(rng.uniform() * kSecondsPerWeek);
      e.user_id = ph.user_ids[rng.uniform_int(ph.user_ids.size())];
      e.pharmacy_id = ph.pharmacy_id;
      e.kind = EventKind::order;
      OrderPayload op;
      int n_lines = 1 + rng.poisson(cfg.mean_extra_lines);
      for (int sku : draw_basket(rng, ph.affinity, n_lines)) {
        OrderLine line;
        line.sku = sku_name(sku);
        line.qty = 1 + rng.poisson(0.5);
        line.price = std::round(rng.lognormal(std::log(ph.spend_scale), cfg.spend_sigma) * 100.0) /
                     100.0;
        op.lines.push_back(std::move(line));
      }
      e.payload = std::move(op);
      week_orders.push_back(events.size());
      events.push_back(std::move(e));
    }

    // Nudge responses: at most one uplift per pharmacy per week.
    bool uplift_applied = false;
    for (const auto& nudge : pending) {
      if (nudge.pharmacy_id != ph.pharmacy_id) continue;
      if (!rng.bernoulli(ph.responsiveness)) continue;

      UnixSeconds opened_ts =
          nudge.sent_ts + static_cast<UnixSeconds>(rng.uniform(1800.0, 2.0 * kSecondsPerDay));
      EventRecord opened;
      opened.ts = opened_ts;
      opened.user_id = nudge.user_id;
      opened.pharmacy_id = ph.pharmacy_id;
      opened.kind = EventKind::nudge_opened;
      opened.payload = NudgePayload{nudge.decision_id, nudge.anchor_sku, nudge.target_sku};
      events.push_back(std::move(opened));

      if (!uplift_applied && cfg.uplift_effect != 1.0) {
        for (std::size_t oi : week_orders) {
          for (auto& line : std::get<OrderPayload>(events[oi].payload).lines)
            line.price *= cfg.uplift_effect;
        }
        uplift_applied = true;
      }

      // The responder orders the recommended target item.
      OrderLine target_line;
      target_line.sku = nudge.target_sku;
      target_line.qty = 1;
      target_line.price =
          std::round(rng.lognormal(std::log(ph.spend_scale), cfg.spend_sigma) * 100.0) / 100.0;
      if (!week_orders.empty()) {
        std::get<OrderPayload>(events[week_orders.front()].payload)
            .lines.push_back(std::move(target_line));
      } else {
        EventRecord order;
        order.ts = opened_ts + static_cast<UnixSeconds>(rng.uniform(600.0, kSecondsPerDay));
        order.user_id = nudge.user_id;
        order.pharmacy_id = ph.pharmacy_id;
        order.kind = EventKind::order;
        OrderPayload op;
        op.lines.push_back(std::move(target_line));
        order.payload = std::move(op);
        week_orders.push_back(events.size());
        events.push_back(std::move(order));
      }
    }
  }

  std::stable_sort(events.begin(), events.end(),
                   [](const EventRecord& a, const EventRecord& b) { return a.ts < b.ts; });
  return events;
}

std::vector<EventRecord> simulate_history(const Population& population) {
  std::vector<EventRecord> all;
  for (int w = 0; w < population.config.weeks; ++w) {
    auto week = step_week(population, {}, population.config.week_start(w), w);
    all.insert(all.end(), std::make_move_iterator(week.begin()),
               std::make_move_iterator(week.end()));
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const EventRecord& a, const EventRecord& b) { return a.ts < b.ts; });
  return all;
}

// ---------------------------------------------------------------------------
// population.json

namespace {

json config_to_json(const SimConfig& c) {
  return json{{"n_pharmacies", c.n_pharmacies},
              {"catalog_size", c.catalog_size},
              {"weeks", c.weeks},
              {"uplift_effect", c.uplift_effect},
              {"responder_fraction", c.responder_fraction},
              {"seed", c.seed},
              {"block_size", c.block_size},
              {"spend_sigma", c.spend_sigma},
              {"mean_extra_lines", c.mean_extra_lines},
              {"language", c.language},
              {"start_date", format_date(c.start_day)},
              {"utc_offset_hours", c.utc_offset_hours}};
}

SimConfig config_from_json(const json& j) {
  SimConfig c;
  c.n_pharmacies = j.value("n_pharmacies", c.n_pharmacies);
  c.catalog_size = j.value("catalog_size", c.catalog_size);
  c.weeks = j.value("weeks", c.weeks);
  c.uplift_effect = j.value("uplift_effect", c.uplift_effect);
  c.responder_fraction = j.value("responder_fraction", c.responder_fraction);
  c.seed = j.value("seed", c.seed);
  c.block_size = j.value("block_size", c.block_size);
  c.spend_sigma = j.value("spend_sigma", c.spend_sigma);
  c.mean_extra_lines = j.value("mean_extra_lines", c.mean_extra_lines);
  c.language = j.value("language", c.language);
  c.utc_offset_hours = j.value("utc_offset_hours", c.utc_offset_hours);
  if (j.contains("start_date")) {
    auto day = parse_date(j["start_date"].get<std::string>());
    if (!day) throw Error("sim config: start_date must be YYYY-MM-DD");
    c.start_day = *day;
  }
  c.validate();
  return c;
}

}  // namespace

void save_population(const Population& population, const std::string& path) {
  json j;
  j["config"] = config_to_json(population.config);
  json phs = json::array();
  for (const auto& ph : population.pharmacies) {
    phs.push_back(json{{"pharmacy", ph.pharmacy_id},
                       {"users", ph.user_ids},
                       {"region", ph.region},
                       {"order_rate", ph.order_rate},
                       {"spend_scale", ph.spend_scale},
                       {"responsiveness", ph.responsiveness},
                       {"engagement", ph.engagement},
                       {"affinity", ph.affinity}});
  }
  j["pharmacies"] = std::move(phs);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write population file: " + path);
  out << j.dump(2) << '\n';
}

Population load_population(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open population file: " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error("population file is not valid JSON: " + path);
  Population pop;
  pop.config = config_from_json(j.at("config"));
  for (const auto& pj : j.at("pharmacies")) {
    PharmacyProfile ph;
    ph.pharmacy_id = pj.at("pharmacy").get<std::string>();
    ph.user_ids = pj.at("users").get<std::vector<std::string>>();
    ph.region = pj.at("region").get<std::string>();
    ph.order_rate = pj.at("order_rate").get<double>();
    ph.spend_scale = pj.at("spend_scale").get<double>();
    ph.responsiveness = pj.at("responsiveness").get<double>();
    ph.engagement = pj.at("engagement").get<double>();
    ph.affinity = pj.at("affinity").get<std::vector<double>>();
    pop.pharmacies.push_back(std::move(ph));
  }
  return pop;
}

}  // namespace nudge
