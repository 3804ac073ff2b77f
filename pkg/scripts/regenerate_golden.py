#!/usr/bin/env python3
"""Regrava os veredictos de referência do corpus em tests/golden/.

Roda a análise de anormalidade (com a varredura local) em cada problema
embutido e grava índice, normalidade, posto de Gram e normalidade local.
Revise o diff antes de commitar: mudança aqui é mudança de comportamento.

Uso:
    python -m scripts.regenerate_golden [NOME ...]
"""

import os
import sys
from pathlib import Path

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.corpus import BUILTINS
from src.engine import AnalysisEngine
from src.problem import load_builtin
from src.utils import write_json

GOLDEN = Path(__file__).resolve().parent.parent / "tests" / "golden"


def main() -> None:
    names = sys.argv[1:] or sorted(BUILTINS)
    unknown = [name for name in names if name not in BUILTINS]
    if unknown:
        print(f"❌ Problemas desconhecidos: {', '.join(unknown)}", file=sys.stderr)
        sys.exit(2)

    print("=" * 60)
    print("  varcalc: Veredictos de referência do corpus")
    print("=" * 60)

    GOLDEN.mkdir(parents=True, exist_ok=True)
    for k, name in enumerate(names, start=1):
        outcome = AnalysisEngine(load_builtin(name)).abnormality(scan_local=True)
        report = outcome.report
        write_json(
            GOLDEN / f"{name}.json",
            {
                "name": name,
                "index": report["index"],
                "normal": report["normal"],
                "gram_rank": report["gram_rank"],
                "locally_normal": report["locally_normal"],
            },
        )
        verdict = "normal" if report["normal"] else "anormal"
        print(f"\n[{k}/{len(names)}] {name}")
        print(f"       índice {report['index']} ({verdict}), Gram {report['gram_rank']}, "
              f"localmente normal: {report['locally_normal']} ({outcome.elapsed_ms}ms)")

    print(f"\n✅ {len(names)} veredicto(s) gravado(s) em {GOLDEN}\n")


if __name__ == "__main__":
    main()
