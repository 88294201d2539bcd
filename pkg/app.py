"""
Cadre Périodique-Parabolique - Point d'entrée en ligne de commande

Usage:
    python app.py eigen --config configs/dirichlet_interval.yaml --out out/
    python app.py all --config configs/moving_window.yaml --threads 4

Codes de sortie : 0 succès, 2 configuration, 3 échec numérique, 4 certificat.
"""

import argparse
import logging
import sys
from pathlib import Path

PROJECT_DIR = Path(__file__).parent
sys.path.insert(0, str(PROJECT_DIR))

from backend.audit_trail import get_audit_trail
from backend.config_loader import COMMANDS, parse_config, validate_config
from backend.engine.errors import PeriodicParabolicError
from backend.runner import run
from backend.security import safe_error_message

logger = logging.getLogger("app")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="app.py",
        description="Valeurs propres périodiques-paraboliques, μ*(b), solutions logistiques "
                    "et localisation de l'explosion.",
        formatter_class=argparse.RawTextHelpFormatter,
    )
    parser.add_argument("command", choices=COMMANDS,
                        help="pipeline à exécuter")
    parser.add_argument("--config", required=True, metavar="FICHIER",
                        help="fichier YAML de run")
    parser.add_argument("--out", default=None, metavar="DOSSIER",
                        help="dossier de sortie (défaut : output.dir de la configuration)")
    parser.add_argument("--threads", type=int, default=None, metavar="N",
                        help="nombre de threads pour les échelons et certificats")
    parser.add_argument("--seed", type=int, default=None, metavar="S",
                        help="graine des vecteurs de départ aléatoires")
    parser.add_argument("--log-level", default="INFO",
                        choices=("DEBUG", "INFO", "WARNING", "ERROR"),
                        help="niveau de journalisation")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)

    try:
        config = parse_config(args.config)
        config.command = args.command
        if args.threads is not None:
            config.threads = args.threads
        if args.seed is not None:
            config.seed = args.seed
        validate_config(config)
        out_dir = Path(args.out) if args.out else Path(config.output.get("dir", "out"))
        audit = get_audit_trail(str(out_dir / "audit_trail.json"))
        manifest = run(config, out_dir, audit)
    except PeriodicParabolicError as exc:
        logger.debug("Détail de l'erreur", exc_info=True)
        print(f"Erreur : {exc.message}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:
        logger.exception("Erreur inattendue")
        print(f"Erreur : {safe_error_message(exc, 'app')}", file=sys.stderr)
        return 3

    headline = ", ".join(f"{k}={v}" for k, v in manifest.headline.items())
    print(f"Run terminé ({manifest.command}) : {headline}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
