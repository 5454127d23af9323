"""
FCOPF 编排模块
闭环校验、模型对比与报告输出
"""
