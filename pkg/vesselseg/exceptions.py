"""整个项目共用的异常类型。管理命令根据类型决定退出码。"""


class VesselSegError(Exception):
    """所有业务异常的基类"""
    exit_code = 2


class ConfigurationError(VesselSegError):
    """参数校验失败，detail 是序列化器给出的错误字典"""

    def __init__(self, detail):
        self.detail = detail
        super().__init__('Invalid configuration: {}'.format(detail))


class GenerationError(VesselSegError):
    """生成器在根节点上耗尽重试次数（几何参数不合理）"""

    def __init__(self, parameter, message):
        self.parameter = parameter
        super().__init__('{} ({})'.format(message, parameter))


class ShapeError(VesselSegError):
    """张量形状不匹配，消息里带上双方的形状"""


class UninitializedStatisticsError(VesselSegError):
    """推理模式下 batchnorm 还没有任何统计量"""


class LabelError(VesselSegError):
    """标签不是 0/1 二值"""


class NumericalError(VesselSegError):
    """训练中出现 NaN/Inf，附带迭代号和每层激活的范数"""
    exit_code = 3

    def __init__(self, message, iteration=None, norms=None):
        self.iteration = iteration
        self.norms = norms or []
        super().__init__(message)

    def diagnostics(self):
        lines = ['iteration: {}'.format(self.iteration)]
        for name, norm in self.norms:
            lines.append('  {:<24} |a| = {:.6g}'.format(name, norm))
        return '\n'.join(lines)


class DataError(VesselSegError):
    """数据集文件缺失或损坏"""

    def __init__(self, message, paths=()):
        self.paths = list(paths)
        if self.paths:
            message = '{}: {}'.format(message, ', '.join(str(p) for p in self.paths))
        super().__init__(message)


class EvaluationError(VesselSegError):
    pass


class SingleClassError(EvaluationError):
    """FOV 内只有一类像素，ROC 和 AUC 没有定义"""
