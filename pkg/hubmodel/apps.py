from django.apps import AppConfig


class HubModelConfig(AppConfig):
    name = "hubmodel"
    verbose_name = "Hub model"
