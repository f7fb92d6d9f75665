use std::future::Future;
use std::sync::Arc;

use anyhow::Context;
use scriptmeet_core::{Clock, SystemClock};
use tokio::net::TcpListener;
use tracing::info;

use crate::config::ServerConfig;
use crate::gateway::router;
use crate::hub::Hub;

/// Opens the hub, binds the listener and serves until `shutdown` resolves.
pub async fn serve(config: ServerConfig, shutdown: impl Future<Output = ()> + Send + 'static) -> anyhow::Result<()> {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let hub = Arc::new(Hub::open(config.hub_settings()?, clock).context("opening data directory")?);
    let listener = TcpListener::bind(config.listen_address)
        .await
        .with_context(|| format!("binding {}", config.listen_address))?;
    info!(address = %listener.local_addr()?, sessions = hub.session_ids().len(), "listening");

    let ticker = {
        let hub = hub.clone();
        let period = config.tick_period();
        tokio::spawn(async move {
            let mut interval = tokio::time::interval(period);
            interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            loop {
                interval.tick().await;
                let hub = hub.clone();
                let _ = tokio::task::spawn_blocking(move || hub.tick_all()).await;
            }
        })
    };
    let result = axum::serve(listener, router(hub.clone()))
        .with_graceful_shutdown(shutdown)
        .await;
    ticker.abort();
    hub.sync_all();
    result.context("server error")
}
