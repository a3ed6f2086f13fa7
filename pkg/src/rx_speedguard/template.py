"""Template generator for documented configuration files."""

from pathlib import Path
from typing import Union

from .config import ALGORITHM_FIELDS, ENV_PREFIX, defaults, render_config


def template_text(algorithm: str) -> str:
    """Commented ``key = value`` document holding the defaults of ``algorithm``."""
    cfg = defaults(algorithm)
    ignored = sorted(k for k, users in ALGORITHM_FIELDS.items() if algorithm not in users)
    header = [
        f"# rx-speedguard configuration for '{algorithm}'",
        "# One 'key = value' per line; '#' starts a comment.",
        f"# Environment variables {ENV_PREFIX}<KEY> override this file;",
        "# command-line flags override both.",
    ]
    if ignored:
        header.append(f"# Ignored by {algorithm}: {', '.join(ignored)}")
    return "\n".join(header) + "\n\n" + render_config(cfg, with_help=True)


def generate_template(algorithm: str, output_file: Union[str, Path]) -> Path:
    """Write a config template for ``algorithm`` and print the next steps.

    Args:
        algorithm: Algorithm whose defaults fill the template
        output_file: Path of the config file to write

    Returns:
        The written path
    """
    output_path = Path(output_file)
    output_path.write_text(template_text(algorithm), encoding="utf-8")

    print("=" * 60)
    print("CONFIG TEMPLATE GENERATOR")
    print("=" * 60)
    print(f"✓ Generated defaults for algorithm '{algorithm}'")
    print(f"✓ Saved to: {output_path}")
    print("\n" + "=" * 60)
    print("NEXT STEPS")
    print("=" * 60)
    print(f"1. Open {output_path} in your text editor")
    print("2. Change the keys you want to tune (total_steps, seed, penalty_factor, ...)")
    print(f"3. Run: rx-speedguard train --config {output_path} --out runs/")
    print(f"\n💡 TIP: Override single keys without editing, e.g. {ENV_PREFIX}SEED=3")
    return output_path
