import sys
import argparse
from typing import List, Optional

from config import Config, ConfigError, RunConfig

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_INTERRUPTED = 130

RUN_COMMANDS = ("dispersion", "equilibrium", "run", "kink-search", "profile", "eigenfunction")


def build_parser() -> argparse.ArgumentParser:
    """Subcommands share --config, --out, --snapshot-every, --quiet and --yes."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', metavar='PATH', help='key = value run configuration file')
    common.add_argument('--out', metavar='DIR', help='output folder (default: a new run_<id> folder)')
    common.add_argument('--snapshot-every', type=float, metavar='T',
                        help='time between snapshots, overrides snapshot_every')
    common.add_argument('--quiet', action='store_true', help='suppress progress lines')
    common.add_argument('--yes', action='store_true', help='skip confirmation prompts')

    parser = argparse.ArgumentParser(
        description="Tube wave laboratory - solitary waves, kinks and shocks in membrane tubes",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Dispersion branches and correctness report of a state
  python main.py dispersion --config state.cfg

  # Split of a perturbed standing wave
  python main.py run --config split.cfg --out results/split

  # Standing kink by variation of r02
  python main.py kink-search --config kink.cfg

  # Storage used by old run folders
  python main.py storage-stats
        """
    )
    commands = parser.add_subparsers(dest='command', metavar='COMMAND')
    helps = {
        'dispersion': 'dispersion branches over a k sweep',
        'equilibrium': "all equilibrium z' roots at a radius and pressure",
        'run': 'evolve an experiment and classify its outcome',
        'kink-search': 'find the r02 of a standing kink',
        'profile': 'standing solitary or kink profile',
        'eigenfunction': 'unstable mode of the standing wave',
    }
    for name in RUN_COMMANDS:
        commands.add_parser(name, parents=[common], help=helps[name])
    cleanup = commands.add_parser('cleanup', parents=[common], help='delete old run folders')
    cleanup.add_argument('--all', action='store_true', help='delete all runs except the current one')
    commands.add_parser('storage-stats', parents=[common], help='show storage used by run folders')
    return parser


def load_run_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    return config.with_overrides({'snapshot_every': args.snapshot_every})


def storage_command(args: argparse.Namespace) -> int:
    from run_cleanup import RunCleanupManager

    Config.validate()
    manager = RunCleanupManager(Config.BASE_OUTPUT_DIR, Config.RUN_ID)
    if args.command == 'storage-stats':
        print("\n" + "=" * 80)
        print("RUN STORAGE STATISTICS")
        print("=" * 80 + "\n")
        manager.print_runs(manager.get_storage_stats())
        return EXIT_OK
    result = manager.manual_cleanup(delete_all=args.all, assume_yes=args.yes)
    return EXIT_FAILURE if result['errors'] else EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point; returns the process exit code"""
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command is None:
        parser.print_help()
        return EXIT_OK
    if args.quiet:
        Config.VERBOSE = False

    try:
        if args.command in ('cleanup', 'storage-stats'):
            return storage_command(args)

        from laboratory import COMMANDS
        from run_store import RunStore

        config = load_run_config(args).validate(args.command)
        store = RunStore(args.out)
        store.write_manifest(config.resolved(), args.command)
        result = COMMANDS[args.command](config, store)
        if not args.quiet:
            print(f"\n📁 Wrote {len(result['files'])} file(s) to {result['path']}\n")
        return result['exit_code']

    except KeyboardInterrupt:
        print("\n\n👋 Goodbye!\n")
        return EXIT_INTERRUPTED
    except ConfigError as e:
        print(f"\n❌ Configuration error in {e.field}: {e.message}\n")
        return EXIT_VALIDATION
    except ValueError as e:
        print(f"\n❌ Invalid input: {str(e)}\n")
        return EXIT_VALIDATION
    except Exception as e:
        print(f"\n❌ Error: {type(e).__name__}: {str(e)}\n")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
