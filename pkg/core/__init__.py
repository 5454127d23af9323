"""
FCOPF 核心模块
电网算例、频率动态仿真、数据集、预测器、MILP编码与求解、最优潮流模型
"""
