from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-level settings read from the environment and .env."""

    app_name: str = Field(default='mmhco-har')
    app_version: str = Field(default='0.1.0')
    app_env: str = Field(default='dev')

    logging_config_file: str = Field(default='logger.yaml')
    log_level: str = Field(default='INFO')
    log_dir: str = Field(default='./logs')
    service_name: str = Field(default='mmhco')

    model_config = SettingsConfigDict(env_file='.env', env_file_encoding='utf-8', case_sensitive=False, extra='ignore')


settings = Settings()
