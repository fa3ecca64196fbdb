#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "msembed.hpp"

namespace fs = std::filesystem;
using namespace msembed;

namespace {

struct Common {
    std::optional<std::uint64_t> seed;
    std::size_t threads = 1;
    std::string config;
    bool force = false;
    std::optional<double> metric_k;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--seed", c.seed, "seed for every random stream (overrides the config)");
    cmd->add_option("--threads", c.threads, "worker cap")->check(CLI::PositiveNumber);
    cmd->add_option("--config", c.config, "run configuration JSON")->check(CLI::ExistingFile);
    cmd->add_flag("--force", c.force, "overwrite existing outputs");
    cmd->add_option("--metric-k", c.metric_k, "Minkowski exponent for retrieval and evaluation");
}

RunConfig load_config(const Common& c) {
    RunConfig rc = c.config.empty() ? run_config_from_text("{}") : run_config_from_text(read_text_file(c.config));
    if (c.seed) rc.apply_seed(*c.seed);
    if (c.metric_k) {
        rc.metric.k = *c.metric_k;
        rc.metric.validate();
        rc.train.eval_metric = rc.metric;
    }
    rc.train.threads = c.threads;
    return rc;
}

void check_writable(const fs::path& path, bool force) {
    if (path.empty()) return;
    if (fs::exists(path) && !force) {
        throw IoError("refusing to overwrite '" + path.string() + "' without --force");
    }
}

std::string num(double v) {
    std::ostringstream s;
    s << std::setprecision(6) << v;
    return s.str();
}

std::string exact(double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

std::vector<std::string> split_csv(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        if (!part.empty()) out.push_back(part);
    }
    return out;
}

void print_metrics(const std::vector<std::pair<std::string, double>>& metrics, bool pretty) {
    if (!pretty) {
        for (const auto& [k, v] : metrics) std::cout << k << '=' << num(v) << '\n';
        return;
    }
    std::size_t width = 6;
    for (const auto& [k, v] : metrics) width = std::max(width, k.size());
    std::cout << std::left << std::setw(static_cast<int>(width)) << "metric" << "  value\n";
    std::cout << std::string(width, '-') << "  ------\n";
    for (const auto& [k, v] : metrics) std::cout << std::setw(static_cast<int>(width)) << k << "  " << num(v) << '\n';
}

// A dataset with the labels of an index and placeholder images, so the
// class-triplet generator can run on stored embeddings.
Dataset label_dataset(const EmbeddingIndex& index) {
    Dataset ds({1, 1, 1});
    for (const auto& r : index.records()) ds.add({r.id, Tensor<float>({1, 1, 1}), r.class_label});
    return ds;
}

// ---------------------------------------------------------------------------

struct IngestArgs {
    std::string format;
    std::string images, labels;
    std::vector<std::string> inputs;
    std::string prefix;
    std::string out;
};

int cmd_ingest(const IngestArgs& a, const Common& c) {
    check_writable(a.out, c.force);
    Dataset ds;
    if (a.format == "idx") {
        if (a.images.empty() || a.labels.empty()) throw ConfigError("idx ingest needs --images and --labels");
        ds = parse_idx(read_file(a.images), read_file(a.labels), a.prefix);
    } else if (a.format == "cifar10") {
        if (a.inputs.empty()) throw ConfigError("cifar10 ingest needs at least one --input batch file");
        std::size_t next = 0;
        for (const auto& path : a.inputs) {
            Dataset part = parse_cifar10_bin(read_file(path), a.prefix, next);
            if (ds.empty()) ds = Dataset(part.image_shape());
            for (const auto& item : part.items()) ds.add(item);
            next += part.size();
        }
    } else {
        if (a.inputs.size() != 1) throw ConfigError("internal ingest needs exactly one --input");
        ds = read_dataset(a.inputs[0]);
    }
    write_dataset(a.out, ds);
    const auto& s = ds.image_shape();
    std::cout << "items=" << ds.size() << "\nclasses=" << ds.class_index().size() << "\nshape=" << s[0] << 'x' << s[1]
              << 'x' << s[2] << '\n';
    return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string train, val, out, log, init;
    std::size_t folds = 0;
    std::optional<std::size_t> epochs, batch_size, batches_per_epoch;
    std::optional<double> lr;
    std::optional<std::string> loss, strategy;
};

void apply_train_flags(RunConfig& rc, const TrainArgs& a) {
    if (a.epochs) rc.train.epochs = *a.epochs;
    if (a.batch_size) rc.train.batch_size = *a.batch_size;
    if (a.batches_per_epoch) rc.train.batches_per_epoch = *a.batches_per_epoch;
    if (a.lr) rc.train.optimizer.learning_rate = *a.lr;
    if (a.loss) {
        if (*a.loss == "contrastive") {
            if (!std::holds_alternative<ContrastiveConfig>(rc.train.loss)) rc.train.loss = ContrastiveConfig{};
        } else if (*a.loss == "angular") {
            if (!std::holds_alternative<AngularConfig>(rc.train.loss)) rc.train.loss = AngularConfig{};
        } else {
            throw ConfigError("--loss must be contrastive or angular");
        }
    }
    if (a.strategy) {
        if (*a.strategy == "biss") rc.sampler.strategy = SamplerConfig::Strategy::biss;
        else if (*a.strategy == "random_baseline") rc.sampler.strategy = SamplerConfig::Strategy::random_baseline;
        else throw ConfigError("--strategy must be biss or random_baseline");
    }
    rc.validate();
}

std::string log_csv(const std::vector<TrainLogRow>& rows) {
    std::string out = "epoch,train_loss,val_loss,triplet_acc,seconds\n";
    for (const auto& r : rows) {
        out += std::to_string(r.epoch) + ',' + exact(r.mean_train_loss) + ',' + exact(r.validation_loss) + ',' +
               exact(r.triplet_accuracy) + ',' + num(r.elapsed_seconds) + '\n';
    }
    return out;
}

double best_val_loss(const TrainResult& r) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& row : r.log) best = std::min(best, row.validation_loss);
    return best;
}

int cmd_train(const TrainArgs& a, const Common& c) {
    RunConfig rc = load_config(c);
    apply_train_flags(rc, a);
    check_writable(a.out, c.force);
    if (!a.log.empty()) check_writable(a.log, c.force);
    const Dataset train_set = read_dataset(a.train);
    std::optional<Checkpoint> init;
    if (!a.init.empty()) init = load_checkpoint(a.init);

    if (a.folds > 0) {
        if (!a.val.empty()) throw ConfigError("--folds validates on held-out folds; drop --val");
        const auto splits = kfold_splits(train_set.size(), a.folds, rc.seed);
        std::vector<TrainLogRow> all_rows;
        std::optional<TrainResult> best;
        double best_loss = 0.0, acc_sum = 0.0, loss_sum = 0.0;
        for (std::size_t f = 0; f < splits.size(); ++f) {
            const Dataset tr = train_set.subset(splits[f].first);
            const Dataset va = train_set.subset(splits[f].second);
            TrainResult r = train(tr, va, rc.net, rc.sampler, rc.train, rc.scorers, init);
            if (r.diverged) throw NumericError("fold " + std::to_string(f + 1) + " diverged: " + r.divergence_reason);
            const double vl = best_val_loss(r);
            const double acc = r.log.back().triplet_accuracy;
            std::cout << "fold" << f + 1 << "_val_loss=" << num(vl) << "\nfold" << f + 1 << "_triplet_accuracy=" << num(acc)
                      << '\n';
            loss_sum += vl;
            acc_sum += acc;
            all_rows.insert(all_rows.end(), r.log.begin(), r.log.end());
            if (!best || vl < best_loss) {
                best_loss = vl;
                best = std::move(r);
            }
        }
        const double n = static_cast<double>(splits.size());
        std::cout << "mean_val_loss=" << num(loss_sum / n) << "\nmean_triplet_accuracy=" << num(acc_sum / n) << '\n';
        save_checkpoint(best->best, a.out);
        if (!a.log.empty()) write_text_file(a.log, log_csv(all_rows));
        return 0;
    }

    if (a.val.empty()) throw ConfigError("train needs --val (or --folds)");
    const Dataset val_set = read_dataset(a.val);
    const TrainResult r = train(train_set, val_set, rc.net, rc.sampler, rc.train, rc.scorers, init);
    if (!a.log.empty()) write_text_file(a.log, log_csv(r.log));
    if (r.diverged) throw NumericError("training diverged: " + r.divergence_reason);
    save_checkpoint(r.best, a.out);
    std::cout << "epochs=" << r.log.size() << "\nbest_epoch=" << r.best.epoch << "\nbest_val_loss=" << num(best_val_loss(r))
              << "\ntriplet_accuracy=" << num(r.log.back().triplet_accuracy)
              << "\nin_class_substitutions=" << r.in_class_substitutions << '\n';
    return 0;
}

// ---------------------------------------------------------------------------

struct EmbedArgs {
    std::string checkpoint, data, out;
};

EmbeddingIndex embed_dataset(const Checkpoint& ckpt, const Dataset& ds, const DistanceMetric& metric, std::size_t threads) {
    const Tensor<float> e = embed_batched(ckpt, ds.stack_all(), 64, threads);
    std::vector<std::string> ids;
    std::vector<int> labels;
    for (const auto& item : ds.items()) {
        ids.push_back(item.id);
        labels.push_back(item.label);
    }
    return build_index(records_from_rows(e, ids, labels), metric);
}

int cmd_embed(const EmbedArgs& a, const Common& c) {
    const RunConfig rc = load_config(c);
    check_writable(a.out, c.force);
    const Checkpoint ckpt = load_checkpoint(a.checkpoint);
    const Dataset ds = read_dataset(a.data);
    const EmbeddingIndex index = embed_dataset(ckpt, ds, rc.metric, c.threads);
    write_embeddings(a.out, index);
    std::cout << "records=" << index.size() << "\ndim=" << index.dim() << "\nmetric_k=" << num(index.metric().k) << '\n';
    return 0;
}

// ---------------------------------------------------------------------------

struct QueryArgs {
    std::string embeddings, id, query_data, checkpoint;
    std::size_t k = 20;
};

int cmd_query(const QueryArgs& a, const Common& c) {
    EmbeddingIndex index = read_embeddings(a.embeddings);
    if (c.metric_k) index = EmbeddingIndex(index.records(), DistanceMetric{*c.metric_k});
    std::vector<Neighbor> hits;
    if (a.query_data.empty()) {
        const EmbeddingRecord* r = index.find(a.id);
        if (!r) throw LookupError("id '" + a.id + "' is not in the index");
        hits = query_topk(index, r->vector.values(), a.k);
    } else {
        if (a.checkpoint.empty()) throw ConfigError("--query-data needs --checkpoint to embed the query");
        const Checkpoint ckpt = load_checkpoint(a.checkpoint);
        const Dataset ds = read_dataset(a.query_data);
        const std::size_t pos = ds.index_of(a.id);
        const Tensor<float> e = embed(ckpt, ds.stack(std::span<const std::size_t>(&pos, 1)));
        hits = query_topk(index, e.row(0), a.k);
    }
    std::cout << "rank,id,class_label,distance\n";
    for (std::size_t i = 0; i < hits.size(); ++i) {
        const EmbeddingRecord* r = index.find(hits[i].id);
        std::cout << i + 1 << ',' << hits[i].id << ',' << r->class_label << ',' << exact(hits[i].distance) << '\n';
    }
    return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string embeddings, checkpoint, data, triplets, ground_truth, queries;
    std::size_t class_triplets = 0;
    std::size_t k = 20;
    bool pretty = false;
};

int cmd_eval(const EvalArgs& a, const Common& c) {
    const RunConfig rc = load_config(c);
    std::optional<EmbeddingIndex> catalog;
    if (!a.embeddings.empty()) {
        catalog = read_embeddings(a.embeddings);
    } else if (!a.checkpoint.empty() && !a.data.empty()) {
        catalog = embed_dataset(load_checkpoint(a.checkpoint), read_dataset(a.data), rc.metric, c.threads);
    } else {
        throw ConfigError("eval needs --embeddings or --checkpoint with --data");
    }
    DistanceMetric metric = c.metric_k ? rc.metric : catalog->metric();
    if (c.metric_k) catalog = EmbeddingIndex(catalog->records(), metric);
    const EmbeddingTable table = EmbeddingTable::from_index(*catalog);

    std::vector<std::pair<std::string, double>> metrics;
    if (!a.triplets.empty()) {
        const auto list = parse_triplet_list(read_text_file(a.triplets));
        metrics.emplace_back("triplet_accuracy", triplet_accuracy(table, list, metric));
        metrics.emplace_back("triplets", static_cast<double>(list.size()));
    }
    if (a.class_triplets > 0) {
        Rng rng(rc.seed);
        const auto list = make_class_triplets(label_dataset(*catalog), a.class_triplets, rng);
        metrics.emplace_back("class_triplet_accuracy", triplet_accuracy(table, list, metric));
    }
    if (!a.ground_truth.empty()) {
        const auto gt = parse_ground_truth_list(read_text_file(a.ground_truth));
        const EmbeddingTable queries = a.queries.empty() ? table : EmbeddingTable::from_index(read_embeddings(a.queries));
        metrics.emplace_back("top" + std::to_string(a.k) + "_recall", topk_recall(queries, gt, *catalog, a.k));
        metrics.emplace_back("random_recall", std::min(1.0, static_cast<double>(a.k) / static_cast<double>(catalog->size())));
    }
    if (metrics.empty()) throw ConfigError("eval needs --triplets, --class-triplets or --ground-truth");
    print_metrics(metrics, a.pretty);
    return 0;
}

// ---------------------------------------------------------------------------

struct ContrastArgs {
    std::string dims = "2,10,100", ks = "0.3,1,2";
    std::size_t points = 1000, trials = 20;
    std::string out;
};

int cmd_diag_contrast(const ContrastArgs& a, const Common& c) {
    check_writable(a.out, c.force);
    std::vector<std::size_t> dims;
    std::vector<double> ks;
    try {
        for (const auto& d : split_csv(a.dims)) dims.push_back(std::stoul(d));
        for (const auto& k : split_csv(a.ks)) ks.push_back(std::stod(k));
    } catch (const std::exception&) {
        throw ConfigError("--dims and --ks take comma-separated numbers");
    }
    if (dims.empty() || ks.empty()) throw ConfigError("--dims and --ks must not be empty");
    const std::uint64_t seed = c.seed.value_or(0);
    std::string csv = "dimension,k,contrast_mean,contrast_std\n";
    for (const auto& row : contrast_table(dims, ks, a.points, a.trials, seed)) {
        csv += std::to_string(row.dimension) + ',' + num(row.k) + ',' + exact(row.contrast_mean) + ',' +
               exact(row.contrast_std) + '\n';
    }
    if (a.out.empty()) std::cout << csv;
    else write_text_file(a.out, csv);
    return 0;
}

// ---------------------------------------------------------------------------

struct SampleArgs {
    std::string data, out;
    std::size_t count = 32;
};

int cmd_sample_pairs(const SampleArgs& a, const Common& c) {
    const RunConfig rc = load_config(c);
    check_writable(a.out, c.force);
    const Dataset ds = read_dataset(a.data);
    PairSampler sampler(ds, rc.scorers, rc.sampler);
    Rng rng(rc.sampler.rng_seed);
    std::string csv = "query_id,candidate_id,label\n";
    for (const auto& p : sampler.make_pair_batch(a.count, rc.train.pos_fraction, rng)) {
        csv += p.query_id + ',' + p.candidate_id + ',' + std::to_string(static_cast<int>(p.label)) + '\n';
    }
    if (a.out.empty()) std::cout << csv;
    else write_text_file(a.out, csv);
    return 0;
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    std::replace(s.begin(), s.end(), '\r', ' ');
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-scale image embedding toolkit"};
    app.require_subcommand(1);
    Common common;

    IngestArgs ingest;
    auto* c_ingest = app.add_subcommand("ingest", "convert a public dataset file to the internal container");
    add_common(c_ingest, common);
    c_ingest->add_option("--format", ingest.format)->required()->check(CLI::IsMember({"idx", "cifar10", "internal"}));
    c_ingest->add_option("--images", ingest.images, "IDX image file (gzip accepted)");
    c_ingest->add_option("--labels", ingest.labels, "IDX label file (gzip accepted)");
    c_ingest->add_option("--input", ingest.inputs, "CIFAR-10 batch file(s) or an internal container");
    c_ingest->add_option("--prefix", ingest.prefix, "item id prefix");
    c_ingest->add_option("--out", ingest.out)->required();

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "train a network");
    add_common(c_train, common);
    c_train->add_option("--train", tr.train)->required();
    c_train->add_option("--val", tr.val);
    c_train->add_option("--out", tr.out, "checkpoint of the best validation epoch")->required();
    c_train->add_option("--log", tr.log, "per-epoch CSV log");
    c_train->add_option("--init", tr.init, "start from this checkpoint");
    c_train->add_option("--folds", tr.folds, "k-fold cross-validation on the training set");
    c_train->add_option("--epochs", tr.epochs);
    c_train->add_option("--batch-size", tr.batch_size);
    c_train->add_option("--batches-per-epoch", tr.batches_per_epoch);
    c_train->add_option("--lr", tr.lr);
    c_train->add_option("--loss", tr.loss, "contrastive|angular");
    c_train->add_option("--strategy", tr.strategy, "biss|random_baseline");

    EmbedArgs em;
    auto* c_embed = app.add_subcommand("embed", "embed a dataset into an index file");
    add_common(c_embed, common);
    c_embed->add_option("--checkpoint", em.checkpoint)->required();
    c_embed->add_option("--data", em.data)->required();
    c_embed->add_option("--out", em.out)->required();

    QueryArgs q;
    auto* c_query = app.add_subcommand("query", "nearest catalog items for one query");
    add_common(c_query, common);
    c_query->add_option("--embeddings", q.embeddings)->required();
    c_query->add_option("--id", q.id)->required();
    c_query->add_option("--query-data", q.query_data, "dataset holding the query image");
    c_query->add_option("--checkpoint", q.checkpoint, "model used to embed --query-data");
    c_query->add_option("-k,--k", q.k)->check(CLI::PositiveNumber);

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "triplet accuracy and top-k recall");
    add_common(c_eval, common);
    c_eval->add_option("--embeddings", ev.embeddings, "catalog index");
    c_eval->add_option("--checkpoint", ev.checkpoint);
    c_eval->add_option("--data", ev.data);
    c_eval->add_option("--triplets", ev.triplets, "anchor,positive,negative list");
    c_eval->add_option("--class-triplets", ev.class_triplets, "score this many label-derived triplets");
    c_eval->add_option("--ground-truth", ev.ground_truth, "query_id,match_id[,...] list");
    c_eval->add_option("--queries", ev.queries, "index holding query vectors (default: the catalog)");
    c_eval->add_option("-k,--k", ev.k)->check(CLI::PositiveNumber);
    c_eval->add_flag("--pretty", ev.pretty, "aligned table instead of key=value lines");

    ContrastArgs ct;
    auto* c_contrast = app.add_subcommand("diag-contrast", "relative contrast versus dimension and exponent");
    add_common(c_contrast, common);
    c_contrast->add_option("--dims", ct.dims);
    c_contrast->add_option("--ks", ct.ks);
    c_contrast->add_option("--points", ct.points);
    c_contrast->add_option("--trials", ct.trials);
    c_contrast->add_option("--out", ct.out);

    SampleArgs sp;
    auto* c_sample = app.add_subcommand("sample-pairs", "print one sampled training batch");
    add_common(c_sample, common);
    c_sample->add_option("--data", sp.data)->required();
    c_sample->add_option("--count", sp.count)->check(CLI::PositiveNumber);
    c_sample->add_option("--out", sp.out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cout.flush();
        std::cerr << "error kind=usage_error message=" << one_line(e.what()) << '\n';
        return 2;
    }

    try {
        if (*c_ingest) return cmd_ingest(ingest, common);
        if (*c_train) return cmd_train(tr, common);
        if (*c_embed) return cmd_embed(em, common);
        if (*c_query) return cmd_query(q, common);
        if (*c_eval) return cmd_eval(ev, common);
        if (*c_contrast) return cmd_diag_contrast(ct, common);
        if (*c_sample) return cmd_sample_pairs(sp, common);
    } catch (const Error& e) {
        std::cout.flush();
        std::cerr << "error kind=" << e.kind() << " message=" << one_line(e.what()) << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cout.flush();
        std::cerr << "error kind=internal_error message=" << one_line(e.what()) << '\n';
        return 1;
    }
    return 1;
}
