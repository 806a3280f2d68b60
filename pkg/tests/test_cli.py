import json
import subprocess
import sys

import pytest

from fskgc.cli import main


@pytest.fixture
def workspace(tmp_path):
    assert main(["gen-synth", "--entities", "20", "--relations", "6", "--seed", "2", "--out",
                 str(tmp_path / "data")]) == 0
    conf = tmp_path / "run.conf"
    conf.write_text("data.dir = data\nmodel.dim = 8\nmodel.cond_dim = 4\nnp.latent_dim = 4\nnp.hidden_dim = 8\n"
                    "icdr.blocks = 1\nicdr.hidden_dim = 16\nicdr.time_dim = 8\ndiffusion.steps = 2\n"
                    "train.K = 3\ntrain.episodes = 4\nout.checkpoint = ck/model.ckpt\nout.metrics = ck/log.jsonl\n")
    return tmp_path, conf


def test_gen_synth_layout(workspace):
    tmp, _ = workspace
    names = {p.name for p in (tmp / "data").iterdir()}
    assert {"background.tsv", "train_tasks.json", "dev_tasks.json", "test_tasks.json", "ent2ids"} <= names


def test_train_then_eval(workspace, capsys):
    tmp, conf = workspace
    assert main(["train", "--config", str(conf)]) == 0
    assert (tmp / "ck" / "model.ckpt").exists()
    assert len((tmp / "ck" / "log.jsonl").read_text().splitlines()) == 4
    capsys.readouterr()
    out_file = tmp / "report.json"
    assert main(["eval", "--checkpoint", str(tmp / "ck" / "model.ckpt"), "--split", "valid",
                 "--out", str(out_file)]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed == json.loads(out_file.read_text())
    assert set(printed) >= {"MRR", "Hits@1", "Hits@5", "Hits@10", "queries"}


def test_eval_with_candidate_file(workspace, capsys):
    tmp, conf = workspace
    main(["train", "--config", str(conf)])
    tasks = json.loads((tmp / "data" / "test_tasks.json").read_text())
    ents = list(json.loads((tmp / "data" / "ent2ids").read_text()))
    cand = tmp / "cands.json"
    cand.write_text(json.dumps({rel: ents[:10] + [t for _, _, t in rows] for rel, rows in tasks.items()}))
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(tmp / "ck" / "model.ckpt"), "--candidates", str(cand)]) == 0
    assert json.loads(capsys.readouterr().out)["queries"] > 0


def test_ablate_and_sweep(workspace, capsys):
    tmp, conf = workspace
    assert main(["ablate", "--variant", "sr", "--config", str(conf)]) == 0
    capsys.readouterr()
    assert main(["sweep-diffusion", "--kinds", "sde,ddim", "--steps", "1,2", "--config", str(conf),
                 "--out", str(tmp / "sweep.csv")]) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    assert rows[0] == "kind,steps,mrr,hits1,hits5,hits10" and len(rows) == 5
    assert (tmp / "sweep.csv").read_text().strip().splitlines() == rows


def test_errors_exit_nonzero(workspace, capsys):
    tmp, conf = workspace
    assert main(["eval", "--checkpoint", str(tmp / "missing.ckpt")]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["sweep-diffusion", "--steps", "0", "--config", str(conf)]) == 2
    with pytest.raises(SystemExit):
        main(["ablate", "--variant", "everything", "--config", str(conf)])


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "fskgc.cli", "gen-synth", "--out", str(tmp_path / "d")],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "50 entities" in res.stdout
