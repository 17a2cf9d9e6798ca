"""
所有管理命令的基类。

退出码：0 成功，1 用法错误，2 数据/配置错误，3 数值错误（NaN、梯度检查失败）。
"""
import logging
import sys
import types
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError
from rich.console import Console

from cli.runconfig import parse_assignments, resolve_run_config
from vesselseg.exceptions import NumericalError, VesselSegError

logger = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


def _usage_error(parser, message):
    # argparse 默认用 2 退出，和数据错误冲突
    if not parser.called_from_command_line:
        raise CommandError('Error: {}'.format(message), returncode=EXIT_USAGE)
    parser.print_usage(sys.stderr)
    parser.exit(EXIT_USAGE, '{}: error: {}\n'.format(parser.prog, message))


class VesselSegCommand(BaseCommand):
    # 没有数据库，也没有需要检查的模型
    requires_system_checks = []
    # 需要输出目录和完整配置的命令
    uses_run_config = True

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        parser.error = types.MethodType(_usage_error, parser)
        return parser

    def add_arguments(self, parser):
        if not self.uses_run_config:
            return
        parser.add_argument('--config', help='key = value 配置文件')
        parser.add_argument('--seed', type=int, help='全局种子')
        parser.add_argument('--out', required=True, help='输出目录')
        parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                            help='覆盖任意配置项，可以重复')
        parser.add_argument('--threads', type=int)
        parser.add_argument('--deterministic', dest='deterministic', action='store_true', default=None)
        parser.add_argument('--no-deterministic', dest='deterministic', action='store_false')

    def execute(self, *args, **options):
        self.console = Console(file=options.get('stdout') or sys.stdout, highlight=False)
        try:
            return super().execute(*args, **options)
        except NumericalError as exc:
            self.stderr.write(exc.diagnostics())
            raise CommandError(str(exc), returncode=exc.exit_code) from exc
        except VesselSegError as exc:
            raise CommandError(str(exc), returncode=exc.exit_code) from exc
        except OSError as exc:
            raise CommandError(str(exc), returncode=EXIT_DATA) from exc

    def flag_overrides(self, options):
        """子类把自己的专用参数映射成配置键"""
        return {}

    def resolve(self, options):
        overrides = parse_assignments(options.get('set'))
        overrides.update({
            'seed': options.get('seed'),
            'threads': options.get('threads'),
            'deterministic': options.get('deterministic'),
        })
        overrides.update(self.flag_overrides(options))
        self.overrides = overrides
        rc = resolve_run_config(options.get('config'), overrides)
        out_dir = Path(options['out'])
        out_dir.mkdir(parents=True, exist_ok=True)
        rc.write(out_dir, self.command_name)
        return rc, out_dir

    @property
    def command_name(self):
        return self.__module__.rsplit('.', 1)[-1]
