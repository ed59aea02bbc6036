"""JSON-lines metrics stream: one header record embedding the config,
then one record per epoch with monotone (epoch, step) ordering."""

import json


class MetricsWriter:
    def __init__(self, path, config_txt):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8")
        self._write({"config": config_txt})

    def _write(self, obj):
        self._fh.write(json.dumps(obj, sort_keys=True,
                                  separators=(",", ":")) + "\n")
        self._fh.flush()

    def record(self, epoch, step, loss, val_ppl, val_bpc, wall_ms_per_step,
               mode, phase="train"):
        self._write({
            "epoch": epoch, "step": step,
            "ce": loss["ce"], "pdr": loss["pdr"], "ar": loss["ar"],
            "tar": loss["tar"], "total": loss["total"],
            "val_ppl": val_ppl, "val_bpc": val_bpc,
            "wall_ms_per_step": wall_ms_per_step,
            "mode": mode, "phase": phase,
        })

    def close(self):
        self._fh.close()


def read_metrics(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def deterministic_stream(path):
    """The metrics stream with wall-clock timing removed, re-serialized
    canonically: the byte stream two runs of the same seeded config must
    reproduce exactly."""
    out = []
    for rec in read_metrics(path):
        rec.pop("wall_ms_per_step", None)
        out.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))
    return ("\n".join(out) + "\n").encode("utf-8")
