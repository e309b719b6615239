import csv
import json

import pytest

from cspot.cli import main, read_results
from cspot.maps import Box
from cspot.metrics import iow, load_ground_truth

SPEC = {"pages": 4, "seed": 1, "noise": 0.05, "distractor_fraction": 0.5}


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = write(root / "spec.json", json.dumps(SPEC))
    assert main(["gen", str(spec), str(root / "corpus")]) == 0
    gts = load_ground_truth(root / "corpus" / "gt.json")
    queries = write(root / "queries.txt", "\n".join(sorted({g.text for g in gts})) + "\n")
    return root, root / "corpus", queries


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh, delimiter="\t"))


def test_gen_layout(corpus):
    _, corpus_dir, _ = corpus
    names = sorted(p.name for p in corpus_dir.iterdir())
    assert names == ["gt.json", "manifest.json", "page0000.cpmap", "page0001.cpmap",
                     "page0002.cpmap", "page0003.cpmap"]
    manifest = json.loads((corpus_dir / "manifest.json").read_text())
    assert manifest["spec"]["seed"] == 1 and len(manifest["pages"]) == 4


def test_gen_deterministic_and_seed_override(corpus, tmp_path):
    root, corpus_dir, _ = corpus
    assert main(["gen", str(root / "spec.json"), str(tmp_path / "again")]) == 0
    for f in corpus_dir.iterdir():
        assert (tmp_path / "again" / f.name).read_bytes() == f.read_bytes()
    assert main(["gen", str(root / "spec.json"), str(tmp_path / "other"), "--seed", "2"]) == 0
    assert (tmp_path / "other" / "page0000.cpmap").read_bytes() != \
        (corpus_dir / "page0000.cpmap").read_bytes()


def test_gen_overflow_exit_code(tmp_path):
    spec = write(tmp_path / "s.json", json.dumps({"pages": 1, "width_cells": 20}))
    assert main(["gen", str(spec), str(tmp_path / "c")]) == 4


def test_gen_invalid_spec_exit_code(tmp_path):
    spec = write(tmp_path / "s.json", json.dumps({"pages": 1, "noise": 2.0}))
    assert main(["gen", str(spec), str(tmp_path / "c")]) == 3
    bad = write(tmp_path / "b.json", "{not json")
    assert main(["gen", str(bad), str(tmp_path / "c")]) == 3


def test_spot_results_and_manifest(corpus, tmp_path, capsys):
    _, corpus_dir, queries = corpus
    out = tmp_path / "results.tsv"
    assert main(["spot", str(corpus_dir), str(queries), "-o", str(out)]) == 0
    assert "per (image, query)" in capsys.readouterr().err
    table = rows(out)
    assert table[0] == ["query", "page_id", "x0", "y0", "x1", "y1", "score", "stage"]
    body = table[1:]
    keys = [(r[0], -float(r[6])) for r in body]
    assert keys == sorted(keys)
    assert {r[7] for r in body} == {"ctc_two_way"}
    manifest = json.loads((tmp_path / "results.manifest.json").read_text())
    assert manifest["config"]["ctc"] == "two_way"
    assert manifest["queries"] == queries.read_text().split()


def test_spot_rank_one_hits_gt(corpus, tmp_path):
    _, corpus_dir, queries = corpus
    out = tmp_path / "r.tsv"
    assert main(["spot", str(corpus_dir), str(queries), "-o", str(out)]) == 0
    gts = load_ground_truth(corpus_dir / "gt.json")
    dets = read_results(out)
    for q, ranked in dets.items():
        top = ranked[0]
        page_words = [g for g in gts if g.page_id == top.page_id]
        best = max(iow(top.box, g, [o for o in page_words if o is not g])
                   for g in page_words if g.text == q)
        assert best >= 0.5, q


def test_spot_flags_override_config(corpus, tmp_path):
    _, corpus_dir, queries = corpus
    cfg = write(tmp_path / "cfg.json", json.dumps({"ctc": "one_way", "top_k": 5}))
    out = tmp_path / "r.tsv"
    assert main(["spot", str(corpus_dir), str(queries), "-o", str(out), "--config", str(cfg),
                 "--ctc", "off", "--levels", "2", "--p-thres", "0.1", "--r-thres", "0.4",
                 "--nms-iou", "0.3"]) == 0
    manifest = json.loads((tmp_path / "r.manifest.json").read_text())["config"]
    assert (manifest["ctc"], manifest["top_k"], manifest["levels"], manifest["p_thres"],
            manifest["r_thres"], manifest["nms_iou"]) == ("off", 5, 2, 0.1, 0.4, 0.3)
    assert {r[7] for r in rows(out)[1:]} == {"pyramid"}


def test_spot_workers_env_and_flag(corpus, tmp_path, monkeypatch):
    _, corpus_dir, queries = corpus
    a, b, c = tmp_path / "a.tsv", tmp_path / "b.tsv", tmp_path / "c.tsv"
    assert main(["spot", str(corpus_dir), str(queries), "-o", str(a)]) == 0
    monkeypatch.setenv("CSPOT_WORKERS", "3")
    assert main(["spot", str(corpus_dir), str(queries), "-o", str(b)]) == 0
    assert main(["spot", str(corpus_dir), str(queries), "-o", str(c), "--workers", "2"]) == 0
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()
    monkeypatch.setenv("CSPOT_WORKERS", "many")
    assert main(["spot", str(corpus_dir), str(queries), "-o", str(c)]) == 3


def test_spot_empty_queries(corpus, tmp_path):
    _, corpus_dir, _ = corpus
    empty = write(tmp_path / "q.txt", "\n\n")
    out = tmp_path / "r.tsv"
    assert main(["spot", str(corpus_dir), str(empty), "-o", str(out)]) == 0
    assert out.read_text() == "query\tpage_id\tx0\ty0\tx1\ty1\tscore\tstage\n"


def test_spot_error_codes(corpus, tmp_path):
    _, corpus_dir, queries = corpus
    bad = write(tmp_path / "q.txt", "th3\n")
    out = str(tmp_path / "r.tsv")
    assert main(["spot", str(corpus_dir), str(bad), "-o", out]) == 5
    assert main(["spot", str(tmp_path / "missing"), str(queries), "-o", out]) == 6
    assert main(["spot", str(tmp_path), str(queries), "-o", out]) == 6
    assert main(["spot", str(corpus_dir), str(tmp_path / "none.txt"), "-o", out]) == 10
    assert main(["spot", str(corpus_dir), str(queries), "--ctc", "both"]) == 2
    broken = tmp_path / "broken"
    broken.mkdir()
    write(broken / "x.cpmap", "garbage")
    assert main(["spot", str(broken), str(queries), "-o", out]) == 7


def spot_to(corpus, tmp_path, name, *flags):
    _, corpus_dir, queries = corpus
    out = tmp_path / name
    assert main(["spot", str(corpus_dir), str(queries), "-o", str(out), *flags]) == 0
    return out


def eval_map(results, gt, *flags, output=None):
    args = ["eval", str(results), str(gt), *flags]
    if output:
        args += ["-o", str(output)]
    assert main(args) == 0
    return json.loads(output.read_text()) if output else None


def test_eval_report(corpus, tmp_path, capsys):
    out = spot_to(corpus, tmp_path, "r.tsv")
    report = eval_map(out, corpus[1] / "gt.json", "--metric", "iow", "--threshold", "0.25",
                      "--sweep", output=tmp_path / "rep.json")
    assert report["overlap_metric"] == "iow" and report["threshold"] == 0.25
    assert report["map"] >= 0.9
    curve = list(report["sweep"].values())
    assert all(a >= b for a, b in zip(curve, curve[1:]))
    assert "MAP" in capsys.readouterr().out


def test_eval_perfect_results(corpus, tmp_path):
    gts = load_ground_truth(corpus[1] / "gt.json")
    lines = ["query\tpage_id\tx0\ty0\tx1\ty1\tscore\tstage"]
    for g in gts:
        x0, y0, x1, y1 = g.box.as_xyxy()
        lines.append(f"{g.text}\t{g.page_id}\t{x0}\t{y0}\t{x1}\t{y1}\t1.000000\tctc_two_way")
    res = write(tmp_path / "perfect.tsv", "\n".join(lines) + "\n")
    report = eval_map(res, corpus[1] / "gt.json", "--threshold", "0.25",
                      output=tmp_path / "rep.json")
    assert report["map"] == 1.0


def test_eval_enlarged_boxes_favour_iow(corpus, tmp_path):
    gts = load_ground_truth(corpus[1] / "gt.json")
    lines = ["query\tpage_id\tx0\ty0\tx1\ty1\tscore\tstage"]
    for g in gts:
        b = g.box
        big = Box(b.row_start - 4, max(b.col_start - 8, 0), b.row_end + 4, b.col_end + 8)
        x0, y0, x1, y1 = big.as_xyxy()
        lines.append(f"{g.text}\t{g.page_id}\t{x0}\t{y0}\t{x1}\t{y1}\t1.000000\tctc_two_way")
    res = write(tmp_path / "big.tsv", "\n".join(lines) + "\n")
    gt_path = corpus[1] / "gt.json"
    by_iow = eval_map(res, gt_path, "--metric", "iow", output=tmp_path / "a.json")["map"]
    by_iou = eval_map(res, gt_path, "--metric", "iou", output=tmp_path / "b.json")["map"]
    assert by_iow >= by_iou


def test_two_way_not_below_one_way(corpus, tmp_path):
    gt = corpus[1] / "gt.json"
    two = eval_map(spot_to(corpus, tmp_path, "two.tsv", "--ctc", "two_way"), gt,
                   output=tmp_path / "two.json")["map"]
    one = eval_map(spot_to(corpus, tmp_path, "one.tsv", "--ctc", "one_way"), gt,
                   output=tmp_path / "one.json")["map"]
    assert two >= one


def test_eval_error_codes(corpus, tmp_path):
    out = spot_to(corpus, tmp_path, "r.tsv")
    gt = corpus[1] / "gt.json"
    text = out.read_text().replace("page0001", "page0042")
    moved = write(tmp_path / "moved.tsv", text)
    assert main(["eval", str(moved), str(gt)]) == 8
    junk = write(tmp_path / "junk.tsv", "nonsense\n")
    assert main(["eval", str(junk), str(gt)]) == 9
    short = write(tmp_path / "short.tsv", out.read_text().splitlines()[0] + "\nthe\tpage0000\n")
    assert main(["eval", str(short), str(gt)]) == 9
    assert main(["eval", str(out), str(gt), "--threshold", "1.5"]) == 2
    assert main(["eval", str(out), str(gt), "--metric", "dice"]) == 2


def test_eval_queries_file_counts_missing_detections(corpus, tmp_path):
    gt = corpus[1] / "gt.json"
    header = "query\tpage_id\tx0\ty0\tx1\ty1\tscore\tstage\n"
    res = write(tmp_path / "none.tsv", header)
    queries = write(tmp_path / "q.txt", "the\n")
    gts = load_ground_truth(gt)
    report = eval_map(res, gt, "--queries", str(queries), output=tmp_path / "rep.json")
    if any(g.text == "the" for g in gts):
        assert report["per_query_ap"] == {"the": 0.0}
    else:
        assert report["excluded_queries"] == ["the"]


def test_version_and_usage(capsys):
    assert main(["--version"]) == 0
    assert main([]) == 2
