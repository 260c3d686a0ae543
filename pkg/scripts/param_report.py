"""Parameter breakdown of the default and toy models, compared with the published figures."""
from rangesam.model import ModelConfig, RangeSAM, parameter_report

if __name__ == "__main__":
    for name, cfg in (("default", ModelConfig()), ("toy", ModelConfig.toy())):
        print(f"== {name} ==")
        print(parameter_report(RangeSAM(cfg)))
        print()
