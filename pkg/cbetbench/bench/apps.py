from django.apps import AppConfig as BaseAppConfig


class AppConfig(BaseAppConfig):
    name = "cbetbench.bench"
    label = "bench"
    verbose_name = "CBET bench"
